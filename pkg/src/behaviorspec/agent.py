"""SAC-Lagrangian (and TD3-Lagrangian) training on the arena.

Function index ``k`` orders the critics: 0 is the reward, then one per
behavioral constraint, then (optionally) the success constraint.  Multiplier
slot ``k`` corresponds to critic ``k``; the policy maximises

    -alpha log pi + w_0 Q0 + sum_k sign_k lambda_k Qk

where ``w_0`` is lambda_0, or ``max(lambda_0, lambda_success)`` when the
success constraint bootstraps the reward, and ``sign_k`` is -1 for upper
bounds and +1 for lower bounds.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import arena
from .arena import ACT_DIM, OBS_DIM, ArenaConfig
from .core import LOWER, UPPER, Batch, ConstraintSpec, ReplayBuffer
from .evaluation import EvalReport, IndicatorMap, evaluate, report_names
from .multipliers import (
    NORMALIZED,
    MultiplierState,
    bootstrap_weight,
    estimate_rates,
    init_multipliers,
    multiplier_update,
    multiplier_weights,
)
from .neural import (
    Adam,
    DeterministicPolicy,
    GaussianPolicy,
    Mlp,
    adam_step,
    load_mlp,
    mlp_backward,
    mlp_forward,
    save_mlp,
    soft_update,
)

log = logging.getLogger(__name__)

SAC = "sac"
TD3 = "td3"


class TrainingHalted(RuntimeError):
    """A loss, objective or gradient became non-finite."""


@dataclass(frozen=True)
class TrainerConfig:
    gamma: float = 0.9
    gamma_constraint: Optional[float] = None
    alpha: float = 0.02
    tau: float = 0.005
    update_every: int = 200
    gradient_steps_per_round: Optional[int] = None
    batch_size: int = 256
    multiplier_every: int = 2000
    multiplier_batch: int = 2000
    random_exploration_steps: int = 10_000
    warmup_steps: int = 2560
    lr: float = 3e-4
    lr_multiplier: float = 0.03
    z_init: float = 0.02
    buffer_size: int = 1_000_000
    hidden: int = 256
    total_steps: int = 100_000
    eval_every: int = 20_000
    eval_episodes: int = 10
    eval_deterministic: bool = True
    variant: str = SAC
    bootstrap_enabled: bool = True
    success_constraint_enabled: bool = True
    success_threshold: float = 0.99
    multiplier_mode: str = NORMALIZED
    multiplier_gradient: str = "coordinate"
    entropy_in_constraint_targets: bool = True
    td3_exploration_noise: float = 0.1
    td3_target_noise: float = 0.2
    td3_noise_clip: float = 0.5
    td3_policy_delay: int = 2
    dtype: str = "float32"

    def __post_init__(self):
        positive = ("update_every", "batch_size", "multiplier_every", "multiplier_batch",
                    "buffer_size", "hidden", "eval_every", "eval_episodes", "td3_policy_delay")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.total_steps < 0 or self.random_exploration_steps < 0 or self.warmup_steps < 0:
            raise ValueError("step counts must be non-negative")
        if max(self.batch_size, self.multiplier_batch) > self.buffer_size:
            raise ValueError("batch sizes cannot exceed the buffer capacity")
        if self.variant not in (SAC, TD3):
            raise ValueError(f"unknown variant {self.variant!r}")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")

    @property
    def grad_steps(self):
        return self.update_every if self.gradient_steps_per_round is None else self.gradient_steps_per_round

    @property
    def gamma_k(self):
        return self.gamma if self.gamma_constraint is None else self.gamma_constraint

    def hash(self):
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class TwinCritic:
    online: Mlp
    target: Mlp
    opt: Adam


@dataclass
class AgentState:
    config: TrainerConfig
    specs: tuple                      # constraint slots, success last if enabled
    policy: object
    policy_opt: Adam
    critics: list
    multipliers: MultiplierState
    buffer: Optional[ReplayBuffer]
    policy_target: object = None      # td3 only
    step: int = 0
    rounds: int = 0
    slot_map: Optional[IndicatorMap] = None
    rng: Optional[np.random.Generator] = None

    @property
    def dtype(self):
        return np.dtype(self.config.dtype)

    @property
    def n_functions(self):
        return len(self.critics)

    @property
    def has_success(self):
        return bool(self.specs) and self.specs[-1].name == arena.SUCCESS


def slot_specs(constraints: Sequence[ConstraintSpec], config: TrainerConfig):
    specs = list(constraints)
    if any(s.name == arena.SUCCESS for s in specs):
        raise ValueError("the success constraint is configured through the trainer config")
    if config.success_constraint_enabled:
        specs.append(ConstraintSpec(arena.SUCCESS, LOWER, config.success_threshold))
    return tuple(specs)


def make_agent(config: TrainerConfig, constraints: Sequence[ConstraintSpec] = (), seed=0,
               obs_dim=OBS_DIM, act_dim=ACT_DIM, buffer=True) -> AgentState:
    """Fresh agent.  Networks are initialised from a stream derived from ``seed``."""
    specs = slot_specs(constraints, config)
    init_rng = np.random.default_rng(np.random.SeedSequence([int(seed), 1]))
    dtype = np.dtype(config.dtype)
    if config.variant == SAC:
        policy = GaussianPolicy(obs_dim, act_dim, config.hidden, rng=init_rng, dtype=dtype)
    else:
        policy = DeterministicPolicy(obs_dim, act_dim, config.hidden, rng=init_rng, dtype=dtype)
    critics = []
    for _ in range(len(specs) + 1):
        online = Mlp((obs_dim + act_dim, config.hidden, config.hidden, 1), ("relu", "relu", "identity"),
                     members=2, rng=init_rng, dtype=dtype)
        critics.append(TwinCritic(online, online.copy(), Adam(online.size, lr=config.lr, dtype=dtype)))
    buf = None
    if buffer:
        cap = min(config.buffer_size, max(config.total_steps, config.batch_size, config.multiplier_batch))
        buf = ReplayBuffer(cap, obs_dim, act_dim, len(specs))
    return AgentState(
        config=config, specs=specs, policy=policy,
        policy_opt=Adam(policy.net.size, lr=config.lr, dtype=dtype),
        critics=critics,
        multipliers=init_multipliers(len(specs), config.z_init, config.lr_multiplier, config.multiplier_mode),
        buffer=buf,
        policy_target=policy.copy() if config.variant == TD3 else None,
        slot_map=IndicatorMap([s.name for s in specs]),
        rng=np.random.default_rng(np.random.SeedSequence([int(seed), 2])),
    )


# ---------------------------------------------------------------------------
# weights


def critic_weights(agent: AgentState, lam=None) -> np.ndarray:
    """Per-critic coefficients of the policy objective (reward critic first)."""
    cfg = agent.config
    lam = multiplier_weights(agent.multipliers) if lam is None else np.asarray(lam)
    w_reward = float(lam[0])
    if agent.has_success and cfg.bootstrap_enabled:
        w_reward = bootstrap_weight(float(lam[0]), float(lam[-1]))
    w = [w_reward]
    for spec, l in zip(agent.specs, lam[1:]):
        w.append(float(l) if spec.bound == LOWER else -float(l))
    return np.array(w)


def _batch_arrays(batch: Batch, agent: AgentState):
    dt = agent.dtype
    rewards = np.vstack([batch.rewards[None], batch.events.T]) if len(agent.specs) else batch.rewards[None]
    return (batch.states.astype(dt, copy=False), batch.actions.astype(dt, copy=False),
            rewards.astype(dt), batch.next_states.astype(dt, copy=False),
            (1.0 - batch.dones).astype(dt))


def _q(net: Mlp, s, a):
    out, cache = mlp_forward(net, np.concatenate([s, a], axis=-1))
    return out[..., 0], cache


def _fit_critic(pair: TwinCritic, s, a, y):
    q, cache = _q(pair.online, s, a)
    diff = q - y
    loss = float((diff * diff).mean())
    if not np.isfinite(loss):
        raise TrainingHalted(f"critic loss became non-finite ({loss})")
    g = (2.0 / diff.shape[-1]) * diff
    grad, _ = mlp_backward(pair.online, cache, g[..., None])
    adam_step(pair.online.flat, grad, pair.opt)
    return loss


# ---------------------------------------------------------------------------
# SAC updates


def sac_targets(agent: AgentState, batch: Batch, rng):
    """Q-targets for every critic (rows) and each batch entry (columns)."""
    cfg = agent.config
    s, a, r, s2, mask = _batch_arrays(batch, agent)
    eps = rng.standard_normal((len(batch), agent.policy.act_dim)).astype(agent.dtype)
    a2, logp2, _ = agent.policy.sample(s2, eps)
    ys = []
    for k, pair in enumerate(agent.critics):
        q2, _ = _q(pair.target, s2, a2)
        minq = q2.min(axis=0)
        gamma = cfg.gamma if k == 0 else cfg.gamma_k
        if k == 0 or cfg.entropy_in_constraint_targets:
            boot = minq - cfg.alpha * logp2
        else:
            boot = minq
        ys.append(r[k] + mask * gamma * boot)
    return s, a, ys


def critic_update(agent: AgentState, batch: Batch, k=None, rng=None):
    """Fit critic ``k`` (or all when ``k`` is None) on one uniform batch.

    Returns the per-critic mean squared errors.  Targets use the target
    networks; each fitted pair's target is then blended with ``tau``.
    """
    rng = agent.rng if rng is None else rng
    s, a, ys = sac_targets(agent, batch, rng)
    ks = range(agent.n_functions) if k is None else [k]
    losses = {}
    for i in ks:
        pair = agent.critics[i]
        losses[i] = _fit_critic(pair, s, a, ys[i])
        soft_update(pair.target, pair.online, agent.config.tau)
    return losses


def policy_objective(agent: AgentState, s, eps, weights):
    """Batch-mean Lagrangian policy objective and its parameter gradient."""
    cfg = agent.config
    n = len(s)
    a, logp, pcache = agent.policy.sample(s, eps)
    obj = -cfg.alpha * logp
    g_a = np.zeros_like(a)
    cols = np.arange(n)
    for w, pair in zip(map(float, weights), agent.critics):
        q, cache = _q(pair.online, s, a)
        idx = q.argmin(axis=0)
        obj = obj + w * q[idx, cols]
        gq = np.zeros_like(q)
        gq[idx, cols] = w / n
        _, gx = mlp_backward(pair.online, cache, gq[..., None], param_grads=False)
        g_a += gx[:, s.shape[1]:]
    value = float(obj.mean())
    g_logp = np.full(n, -cfg.alpha / n, dtype=a.dtype)
    grad = agent.policy.backward(pcache, g_a, g_logp)
    return value, grad


def policy_update(agent: AgentState, batch: Batch, rng=None, weights=None):
    """One Adam ascent step on the policy; multipliers are read-only here."""
    rng = agent.rng if rng is None else rng
    s = batch.states.astype(agent.dtype, copy=False)
    eps = rng.standard_normal((len(batch), agent.policy.act_dim)).astype(agent.dtype)
    weights = critic_weights(agent) if weights is None else weights
    value, grad = policy_objective(agent, s, eps, weights)
    if not np.isfinite(value):
        raise TrainingHalted(f"policy objective became non-finite ({value})")
    adam_step(agent.policy.net.flat, -grad, agent.policy_opt)
    return value


# ---------------------------------------------------------------------------
# TD3 updates


def td3_policy_objective(agent: AgentState, s, weights):
    n = len(s)
    a, pcache = agent.policy.forward(s)
    obj = np.zeros(n, dtype=a.dtype)
    g_a = np.zeros_like(a)
    cols = np.arange(n)
    for w, pair in zip(map(float, weights), agent.critics):
        q, cache = _q(pair.online, s, a)
        idx = q.argmin(axis=0)
        obj = obj + w * q[idx, cols]
        gq = np.zeros_like(q)
        gq[idx, cols] = w / n
        _, gx = mlp_backward(pair.online, cache, gq[..., None], param_grads=False)
        g_a += gx[:, s.shape[1]:]
    return float(obj.mean()), agent.policy.backward(pcache, g_a)


def td3_update(agent: AgentState, batch: Batch, rng=None, weights=None):
    """One TD3 round: all critics, then (every ``td3_policy_delay`` rounds) the actor.

    Returns ``(critic losses, policy objective or None)``.
    """
    if agent.config.variant != TD3:
        raise ValueError("td3_update needs a td3 agent")
    cfg = agent.config
    rng = agent.rng if rng is None else rng
    s, a, r, s2, mask = _batch_arrays(batch, agent)
    noise = rng.normal(0.0, cfg.td3_target_noise, size=a.shape).astype(agent.dtype)
    noise = np.clip(noise, -cfg.td3_noise_clip, cfg.td3_noise_clip)
    a2 = np.clip(agent.policy_target.deterministic(s2) + noise, -1.0, 1.0)
    losses = {}
    for k, pair in enumerate(agent.critics):
        q2, _ = _q(pair.target, s2, a2)
        gamma = cfg.gamma if k == 0 else cfg.gamma_k
        losses[k] = _fit_critic(pair, s, a, r[k] + mask * gamma * q2.min(axis=0))
    agent.rounds += 1
    value = None
    if agent.rounds % cfg.td3_policy_delay == 0:
        weights = critic_weights(agent) if weights is None else weights
        value, grad = td3_policy_objective(agent, s, weights)
        if not np.isfinite(value):
            raise TrainingHalted(f"policy objective became non-finite ({value})")
        adam_step(agent.policy.net.flat, -grad, agent.policy_opt)
        soft_update(agent.policy_target.net, agent.policy.net, cfg.tau)
        for pair in agent.critics:
            soft_update(pair.target, pair.online, cfg.tau)
    return losses, value


# ---------------------------------------------------------------------------
# acting


def act(agent: AgentState, obs, mode="deterministic", rng=None):
    """Action for one observation; ``mode`` is ``stochastic`` or ``deterministic``."""
    obs = np.asarray(obs, dtype=agent.dtype).reshape(1, -1)
    if mode == "deterministic":
        return agent.policy.deterministic(obs)[0].astype(np.float64)
    rng = agent.rng if rng is None else rng
    if agent.config.variant == SAC:
        eps = rng.standard_normal((1, agent.policy.act_dim)).astype(agent.dtype)
        return agent.policy.sample(obs, eps)[0][0].astype(np.float64)
    a = agent.policy.deterministic(obs)[0].astype(np.float64)
    a = a + rng.normal(0.0, agent.config.td3_exploration_noise, size=a.shape)
    return np.clip(a, -1.0, 1.0)


def exploration_action(agent: AgentState, obs, rng):
    """What the trainer does at the current step: uniform during exploration."""
    if agent.step < agent.config.random_exploration_steps:
        return rng.uniform(-1.0, 1.0, size=agent.policy.act_dim)
    return act(agent, obs, "stochastic", rng)


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    agent: AgentState
    metrics: list = field(default_factory=list)
    multiplier_log: list = field(default_factory=list)
    halted: Optional[str] = None
    stopped_early: bool = False


def run_streams(seed):
    """Independent generators for environment, acting, updates and evaluation."""
    env_ss, act_ss, upd_ss, eval_ss = np.random.SeedSequence([int(seed), 0]).spawn(4)
    return (np.random.default_rng(env_ss), np.random.default_rng(act_ss),
            np.random.default_rng(upd_ss), eval_ss)


def eval_seed(eval_ss, step):
    return np.random.default_rng([int(eval_ss.generate_state(1)[0]), int(step)])


def metrics_row(step, report: EvalReport, lam, critic_losses, objective):
    row = {"step": step, "return_mean": report.return_mean, "success_rate": report.success_rate}
    for name, rate in report.rates.items():
        row[f"rate_{name}"] = rate
    if lam is not None:
        for i, l in enumerate(lam):
            row[f"lambda_{i}"] = float(l)
    for i, l in enumerate(critic_losses):
        row[f"critic_loss_{i}"] = l
    row["policy_objective"] = objective
    return row


def penalized_reward(reward, events, penalties, imap=None):
    """``reward - sum_k w_k * indicator_k(events)`` for a ``{behavior: w}`` map."""
    if not penalties:
        return reward
    imap = imap or IndicatorMap(list(penalties))
    return reward - float(np.dot(list(penalties.values()), imap(events)))


def train(agent: AgentState, env_config: ArenaConfig, seed, penalties=None, schedule=(),
          callback: Optional[Callable[[dict], bool]] = None, report_extra=()) -> TrainResult:
    """Run the SAC/TD3-Lagrangian loop for ``config.total_steps`` environment steps.

    ``penalties`` maps behavior names to fixed per-step reward penalties (the
    reward-engineering baseline).  ``schedule`` holds ``(step, slot, threshold)``
    threshold replacements.  ``callback`` receives every metrics row and may
    return True to stop early.
    """
    cfg = agent.config
    env_rng, act_rng, upd_rng, eval_ss = run_streams(seed)
    agent.rng = upd_rng
    result = TrainResult(agent)
    if cfg.total_steps == 0:
        return result
    names = report_names(list(report_extra) + [s.name for s in agent.specs])
    pen_map = IndicatorMap(list(penalties)) if penalties else None
    schedule = sorted(schedule)
    sched_i = 0

    state, obs = arena.reset(env_config, env_rng)
    losses = [float("nan")] * agent.n_functions
    loss_acc = np.zeros(agent.n_functions)
    loss_n = 0
    objective = float("nan")
    try:
        for u in range(1, cfg.total_steps + 1):
            action = exploration_action(agent, obs, act_rng)
            state, obs2, reward, done, truncated, ev = arena.step(state, action, env_config)
            if pen_map is not None:
                reward = penalized_reward(reward, ev, penalties, pen_map)
            agent.buffer.add(obs, action, reward, obs2, done, agent.slot_map(ev), truncated)
            agent.step = u
            if done or truncated:
                state, obs = arena.reset(env_config, env_rng)
            else:
                obs = obs2

            if u % cfg.update_every == 0 and u >= cfg.warmup_steps and len(agent.buffer) >= cfg.batch_size:
                weights = critic_weights(agent)
                for _ in range(cfg.grad_steps):
                    batch = agent.buffer.sample_uniform(cfg.batch_size, upd_rng)
                    if cfg.variant == SAC:
                        step_losses = critic_update(agent, batch, rng=upd_rng)
                        objective = policy_update(agent, batch, rng=upd_rng, weights=weights)
                    else:
                        step_losses, value = td3_update(agent, batch, rng=upd_rng, weights=weights)
                        if value is not None:
                            objective = value
                    for k, l in step_losses.items():
                        loss_acc[k] += l
                    loss_n += 1
                losses = [float(v) for v in loss_acc / loss_n]
                loss_acc[:] = 0.0
                loss_n = 0

            while sched_i < len(schedule) and schedule[sched_i][0] <= u:
                _, slot, threshold = schedule[sched_i]
                specs = list(agent.specs)
                specs[slot] = replace(specs[slot], threshold=threshold)
                agent.specs = tuple(specs)
                sched_i += 1

            if agent.specs and u % cfg.multiplier_every == 0 and len(agent.buffer) >= cfg.multiplier_batch:
                rates = estimate_rates(agent.buffer.last_n(cfg.multiplier_batch).events)
                agent.multipliers = multiplier_update(agent.multipliers, rates, agent.specs,
                                                      cfg.multiplier_gradient)
                lam = multiplier_weights(agent.multipliers)
                row = {"step": u}
                for i, l in enumerate(lam):
                    row[f"lambda_{i}"] = float(l)
                for spec, r in zip(agent.specs, rates.rates):
                    row[f"rate_{spec.name}"] = float(r)
                    row[f"threshold_{spec.name}"] = spec.threshold
                for i, l in enumerate(losses):
                    row[f"critic_loss_{i}"] = l
                row["policy_objective"] = objective
                result.multiplier_log.append(row)

            if u % cfg.eval_every == 0:
                rng_e = eval_seed(eval_ss, u)
                mode = "deterministic" if cfg.eval_deterministic else "stochastic"
                report = evaluate(lambda o: act(agent, o, mode, rng_e), env_config,
                                  cfg.eval_episodes, rng_e, names)
                lam = multiplier_weights(agent.multipliers) if agent.specs else None
                row = metrics_row(u, report, lam, losses, objective)
                result.metrics.append(row)
                log.info("step %d success %.2f return %.3f", u, report.success_rate, report.return_mean)
                if callback is not None and callback(row):
                    result.stopped_early = True
                    break
    except (TrainingHalted, FloatingPointError) as exc:
        result.halted = f"step {agent.step}: {exc}"
        log.warning("training halted at step %d: %s", agent.step, exc)
    return result


# ---------------------------------------------------------------------------
# checkpoints


def save_agent(agent: AgentState, directory):
    """Write network blobs plus a JSON manifest (step, config hash, multipliers)."""
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "policy.bin"), "wb") as fh:
        fh.write(save_mlp(agent.policy.net))
    if agent.policy_target is not None:
        with open(os.path.join(directory, "policy_target.bin"), "wb") as fh:
            fh.write(save_mlp(agent.policy_target.net))
    for k, pair in enumerate(agent.critics):
        with open(os.path.join(directory, f"critic_{k}.bin"), "wb") as fh:
            fh.write(save_mlp(pair.online))
        with open(os.path.join(directory, f"critic_{k}_target.bin"), "wb") as fh:
            fh.write(save_mlp(pair.target))
    manifest = {
        "step": agent.step,
        "config_hash": agent.config.hash(),
        "config": asdict(agent.config),
        "specs": [asdict(s) for s in agent.specs],
        "multipliers": {"mode": agent.multipliers.mode, "z": agent.multipliers.z.tolist(),
                        "lambda": multiplier_weights(agent.multipliers).tolist()},
    }
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)


def load_agent(directory) -> AgentState:
    with open(os.path.join(directory, "manifest.json")) as fh:
        manifest = json.load(fh)
    known = {f.name for f in fields(TrainerConfig)}
    config = TrainerConfig(**{k: v for k, v in manifest["config"].items() if k in known})
    specs = [ConstraintSpec(**s) for s in manifest["specs"]]
    constraints = [s for s in specs if s.name != arena.SUCCESS]
    agent = make_agent(config, constraints, buffer=False)

    def read(name):
        with open(os.path.join(directory, name), "rb") as fh:
            return load_mlp(fh.read())

    agent.policy.net = read("policy.bin")
    if agent.policy_target is not None:
        agent.policy_target.net = read("policy_target.bin")
    for k, pair in enumerate(agent.critics):
        pair.online = read(f"critic_{k}.bin")
        pair.target = read(f"critic_{k}_target.bin")
    agent.multipliers.z[...] = manifest["multipliers"]["z"]
    agent.step = manifest["step"]
    return agent
