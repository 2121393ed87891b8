"""Plain soft actor-critic on the arena, with no constraint machinery.

This is a separate, minimal code path: one twin critic, a fixed reward
weight of one, no multipliers.  It consumes random numbers in the same order
as :func:`behaviorspec.agent.train`, so with constraints disabled the two
trainers produce identical metrics.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import arena
from .agent import TrainerConfig, eval_seed, metrics_row, run_streams
from .core import ReplayBuffer
from .evaluation import evaluate, report_names
from .neural import Adam, GaussianPolicy, Mlp, adam_step, mlp_backward, mlp_forward, soft_update

log = logging.getLogger(__name__)


@dataclass
class SacState:
    policy: GaussianPolicy
    policy_opt: Adam
    critic: Mlp
    critic_target: Mlp
    critic_opt: Adam
    buffer: ReplayBuffer


@dataclass
class SacResult:
    state: SacState
    metrics: list = field(default_factory=list)


def make_sac(config: TrainerConfig, seed=0, obs_dim=arena.OBS_DIM, act_dim=arena.ACT_DIM) -> SacState:
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 1]))
    dt = np.dtype(config.dtype)
    policy = GaussianPolicy(obs_dim, act_dim, config.hidden, rng=rng, dtype=dt)
    critic = Mlp((obs_dim + act_dim, config.hidden, config.hidden, 1), ("relu", "relu", "identity"),
                 members=2, rng=rng, dtype=dt)
    cap = min(config.buffer_size, max(config.total_steps, config.batch_size))
    return SacState(policy, Adam(policy.net.size, lr=config.lr, dtype=dt), critic, critic.copy(),
                    Adam(critic.size, lr=config.lr, dtype=dt), ReplayBuffer(cap, obs_dim, act_dim, 0))


def _q(net, s, a):
    out, cache = mlp_forward(net, np.concatenate([s, a], axis=-1))
    return out[..., 0], cache


def sac_step(sac: SacState, batch, config: TrainerConfig, rng):
    """Critic regression then one policy ascent step; returns (critic loss, objective)."""
    dt = np.dtype(config.dtype)
    s = batch.states.astype(dt, copy=False)
    a = batch.actions.astype(dt, copy=False)
    r = batch.rewards.astype(dt)
    s2 = batch.next_states.astype(dt, copy=False)
    mask = (1.0 - batch.dones).astype(dt)
    n, act_dim = len(s), sac.policy.act_dim

    eps = rng.standard_normal((n, act_dim)).astype(dt)
    a2, logp2, _ = sac.policy.sample(s2, eps)
    q2, _ = _q(sac.critic_target, s2, a2)
    y = r + mask * config.gamma * (q2.min(axis=0) - config.alpha * logp2)
    q, cache = _q(sac.critic, s, a)
    diff = q - y
    loss = float((diff * diff).mean())
    grad, _ = mlp_backward(sac.critic, cache, ((2.0 / n) * diff)[..., None])
    adam_step(sac.critic.flat, grad, sac.critic_opt)
    soft_update(sac.critic_target, sac.critic, config.tau)

    eps = rng.standard_normal((n, act_dim)).astype(dt)
    pa, logp, pcache = sac.policy.sample(s, eps)
    q, cache = _q(sac.critic, s, pa)
    idx = q.argmin(axis=0)
    cols = np.arange(n)
    obj = -config.alpha * logp + q[idx, cols]
    gq = np.zeros_like(q)
    gq[idx, cols] = 1.0 / n
    _, gx = mlp_backward(sac.critic, cache, gq[..., None], param_grads=False)
    g_logp = np.full(n, -config.alpha / n, dtype=pa.dtype)
    pgrad = sac.policy.backward(pcache, gx[:, s.shape[1]:], g_logp)
    adam_step(sac.policy.net.flat, -pgrad, sac.policy_opt)
    return loss, float(obj.mean())


def train_sac(config: TrainerConfig, env_config: arena.ArenaConfig, seed=0) -> SacResult:
    sac = make_sac(config, seed)
    env_rng, act_rng, upd_rng, eval_ss = run_streams(seed)
    result = SacResult(sac)
    dt = np.dtype(config.dtype)
    names = report_names()
    state, obs = arena.reset(env_config, env_rng)
    loss, objective = float("nan"), float("nan")
    for u in range(1, config.total_steps + 1):
        if u - 1 < config.random_exploration_steps:
            action = act_rng.uniform(-1.0, 1.0, size=sac.policy.act_dim)
        else:
            eps = act_rng.standard_normal((1, sac.policy.act_dim)).astype(dt)
            action = sac.policy.sample(np.asarray(obs, dtype=dt).reshape(1, -1), eps)[0][0].astype(np.float64)
        state, obs2, reward, done, truncated, _ = arena.step(state, action, env_config)
        sac.buffer.add(obs, action, reward, obs2, done, np.zeros(0), truncated)
        if done or truncated:
            state, obs = arena.reset(env_config, env_rng)
        else:
            obs = obs2

        if u % config.update_every == 0 and u >= config.warmup_steps and len(sac.buffer) >= config.batch_size:
            total = 0.0
            for _ in range(config.grad_steps):
                batch = sac.buffer.sample_uniform(config.batch_size, upd_rng)
                step_loss, objective = sac_step(sac, batch, config, upd_rng)
                total += step_loss
            loss = total / config.grad_steps

        if u % config.eval_every == 0:
            rng_e = eval_seed(eval_ss, u)
            if config.eval_deterministic:
                policy_fn = lambda o: sac.policy.deterministic(np.asarray(o, dtype=dt).reshape(1, -1))[0].astype(np.float64)
            else:
                def policy_fn(o):
                    e = rng_e.standard_normal((1, sac.policy.act_dim)).astype(dt)
                    return sac.policy.sample(np.asarray(o, dtype=dt).reshape(1, -1), e)[0][0].astype(np.float64)
            report = evaluate(policy_fn, env_config, config.eval_episodes, rng_e, names)
            result.metrics.append(metrics_row(u, report, None, [loss], objective))
            log.info("step %d success %.2f return %.3f", u, report.success_rate, report.return_mean)
    return result
