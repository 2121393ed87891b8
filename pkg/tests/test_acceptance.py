"""One test per acceptance criterion, each at its stated tolerance.

The training criteria read the result cache filled by
``scripts/run_acceptance.py``; with an empty cache they train from scratch
(hours on one core).
"""

import time
from pathlib import Path

import numpy as np

from behaviorspec import experiments
from behaviorspec.agent import TrainerConfig, critic_weights, make_agent, policy_objective, td3_policy_objective, train
from behaviorspec.arena import ArenaConfig
from behaviorspec.core import UPPER, ConstraintSpec
from behaviorspec.harness import FEASIBLE_PERFORMANT, class_fraction, write_csv
from behaviorspec.multipliers import init_multipliers, multiplier_loss_grad, normalized_multipliers
from behaviorspec.neural import Mlp, mlp_backward, mlp_forward, squashed_gaussian, squashed_gaussian_backward
from behaviorspec.oracle import (
    behavior_rates,
    dual_minimize,
    exact_return,
    gda_reference,
    lambda_grid,
    occupancy,
    parse_cmdp,
    random_cmdp,
)
from behaviorspec.sac import train_sac

DATA = Path(__file__).parent / "data"


def rel_err(analytic, fd):
    analytic, fd = np.ravel(analytic), np.ravel(fd)
    return float(np.max(np.abs(analytic - fd)) / max(np.max(np.abs(fd)), 1e-8))


def central_fd(f, x, h=1e-6):
    """Central differences of scalar ``f()`` over every entry of array ``x`` (modified in place)."""
    out = np.zeros(x.shape)
    for idx in np.ndindex(*x.shape):
        old = x[idx]
        x[idx] = old + h
        up = f()
        x[idx] = old - h
        down = f()
        x[idx] = old
        out[idx] = (up - down) / (2 * h)
    return out


def test_gradient_suite(criterion):
    rng = np.random.default_rng(2024)
    start = time.time()
    worst = {}

    errs = []
    for _ in range(100):
        net = Mlp((3, 5, 4, 2), ("tanh", "relu", "identity"), layer_norm=True, members=2, rng=rng)
        net.g[...] = rng.uniform(0.5, 1.5, net.g.shape)
        x = rng.normal(size=(4, 3))
        c = rng.normal(size=(2, 4, 2))
        loss = lambda: float((mlp_forward(net, x)[0] * c).sum())
        grad, gx = mlp_backward(net, mlp_forward(net, x)[1], c)
        errs.append(max(rel_err(grad, central_fd(loss, net.flat)), rel_err(gx, central_fd(loss, x))))
    worst["mlp_layer_norm"] = max(errs)

    errs = []
    for _ in range(100):
        mean, log_std = rng.normal(size=(3, 2)), rng.uniform(-2, 1, size=(3, 2))
        eps, ga, gl = rng.normal(size=(3, 2)), rng.normal(size=(3, 2)), rng.normal(size=3)

        def f():
            a, lp, _ = squashed_gaussian(mean, log_std, eps)
            return float((a * ga).sum() + (lp * gl).sum())

        gm, gs = squashed_gaussian_backward(squashed_gaussian(mean, log_std, eps)[2], ga, gl)
        errs.append(max(rel_err(gm, central_fd(f, mean)), rel_err(gs, central_fd(f, log_std))))
    worst["squashed_gaussian"] = max(errs)

    lava, look = ConstraintSpec("in_lava", UPPER, 0.01), ConstraintSpec("not_looking", UPPER, 0.1)
    for variant in ("sac", "td3"):
        errs = []
        for i in range(100):
            cfg = TrainerConfig(hidden=6, dtype="float64", variant=variant)
            agent = make_agent(cfg, (lava, look), seed=i, obs_dim=3, act_dim=2, buffer=False)
            s, eps = rng.normal(size=(4, 3)), rng.normal(size=(4, 2))
            w = critic_weights(agent, rng.dirichlet(np.ones(4)))
            if variant == "sac":
                f = lambda: policy_objective(agent, s, eps, w)[0]
                g = policy_objective(agent, s, eps, w)[1]
            else:
                f = lambda: td3_policy_objective(agent, s, w)[0]
                g = td3_policy_objective(agent, s, w)[1]
            errs.append(rel_err(g, central_fd(f, agent.policy.net.flat)))
        worst[f"{variant}_policy_objective"] = max(errs)

    errs = []
    for _ in range(100):
        n = int(rng.integers(1, 6))
        state = init_multipliers(n)
        state.z[:] = rng.normal(size=n)
        c = rng.normal(size=n)
        _, g = multiplier_loss_grad(state, c, "full")
        f = lambda: float(c @ normalized_multipliers(state.z)[1:])
        errs.append(rel_err(g, central_fd(f, state.z)))
    worst["softmax_multiplier_loss"] = max(errs)

    elapsed = time.time() - start
    ok = all(v <= 1e-4 for v in worst.values()) and elapsed <= 60
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f"; {elapsed:.0f}s"
    assert criterion("1 gradient suite (rel err <= 1e-4, <= 60s)", ok, detail)


def test_occupancy_identity(criterion):
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(50):
        m = random_cmdp(rng, int(rng.integers(2, 8)), int(rng.integers(2, 4)), 2, gamma=rng.uniform(0.5, 0.99))
        for _ in range(50):
            pi = rng.dirichlet(np.ones(m.A), size=m.S)
            x = occupancy(m, pi)
            for k in range(m.K):
                worst = max(worst, abs(exact_return(m, pi, m.C[k]) - m.Z * float((x * m.C[k]).sum())))
    assert criterion("2 occupancy identity (<= 1e-10)", worst <= 1e-10, f"max abs diff {worst:.1e}")


def test_oracle_equivalence(criterion):
    start = time.time()
    m = parse_cmdp((DATA / "cmdp_5x2.txt").read_text())
    dual = dual_minimize(m, lambda_grid(1, np.linspace(0.0, 10.0, 2001)))
    trace = gda_reference(m, steps=5000)
    ret = exact_return(m, trace.average_policy, m.R)
    cost = behavior_rates(m, trace.average_policy)[0]
    rel = abs(ret - dual.primal_value) / abs(dual.primal_value)
    elapsed = time.time() - start
    ok = rel <= 0.02 and cost <= m.d[0] + 0.01 and elapsed <= 60
    assert criterion("3 oracle equivalence (return within 2%, cost <= d + 0.01)", ok,
                     f"gda {ret:.4f} vs primal {dual.primal_value:.4f} ({rel:.2%}), "
                     f"cost {cost:.4f} vs d {m.d[0]}; {elapsed:.0f}s")


def _after_first_update(rows, trainer):
    first = trainer["warmup_steps"] + trainer["update_every"]
    return [r for r in rows if r["step"] >= first]


def test_stability(criterion):
    out = experiments.stability_experiment()
    name, switch, feasible = out["constraint"], out["switch_step"], out["feasible_threshold"]
    norm, raw = out["log"]["normalized"], out["log"]["unnormalized"]
    total = out["trainer"]["total_steps"]

    lam_cols = [c for c in norm[0] if c.startswith("lambda_")]
    in_simplex = all(0.0 <= r[c] <= 1.0 for r in norm for c in lam_cols)
    loss_rows = _after_first_update(norm + out["metrics"]["normalized"], out["trainer"])
    losses_ok = out["halted"]["normalized"] is None and experiments.finite(
        [r[c] for r in loss_rows for c in r if c.startswith("critic_loss_")])

    at = lambda rows: [r for r in rows if r["step"] <= switch][-1]["lambda_1"]
    ratio = at(raw) / at(norm)
    tail = [r[f"rate_{name}"] for r in norm if r["step"] > 0.8 * total]
    tail_rate = float(np.mean(tail))
    ok = in_simplex and losses_ok and ratio > 10 and tail_rate <= feasible
    assert criterion("4 multiplier stability (simplex, finite losses, >10x, post-switch feasible)", ok,
                     f"lambda in [0,1]: {in_simplex}, finite losses: {losses_ok}, "
                     f"unnormalized/normalized at switch {at(raw):.3g}/{at(norm):.3g} = {ratio:.1f}x, "
                     f"final-20% {name} rate {tail_rate:.3f} <= {feasible}")


def _bar_runs(name):
    preset, bar = experiments.acceptance_bars()[name]
    runs = experiments.bar_experiment(preset, bar)
    reached = [r["reached_step"] for r in runs]
    return runs, reached, sum(s is not None for s in reached)


def test_unconstrained_baseline(criterion):
    _, reached, hits = _bar_runs("unconstrained")
    assert criterion("5 unconstrained SAC (success >= 0.9 within 300k, >= 4/5 seeds)", hits >= 4,
                     f"{hits}/5 seeds; first step reaching the bar per seed: {reached}")


def test_constrained_training(criterion):
    _, reached, hits = _bar_runs("constrained")
    ok = criterion("6a bootstrap SAC-Lagrangian (success >= 0.8, rates <= d + 0.05 within 500k, >= 3/5)",
                   hits >= 3, f"{hits}/5 seeds; first step reaching the bar per seed: {reached}")
    _, reached_b, hits_b = _bar_runs("no_bootstrap")
    ok_b = criterion("6b same config without bootstrap or success constraint fails that bar (< 3/5)",
                     hits_b < 3, f"{hits_b}/5 seeds reached the bar: {reached_b}")
    assert ok and ok_b


def test_reward_engineering_trend(criterion):
    one = experiments.grid_experiment("grid_1")
    two = experiments.grid_experiment("grid_2")
    f1, f2 = class_fraction(one, FEASIBLE_PERFORMANT), class_fraction(two, FEASIBLE_PERFORMANT)
    assert criterion("7 reward-engineering feasible-performant fraction shrinks (2 constraints < 1)",
                     f2 < f1, f"1 constraint {f1:.2f} of {len(one)} cells, 2 constraints {f2:.2f} of {len(two)} cells")


def test_reduction_identity(criterion, tmp_path):
    cfg = TrainerConfig(hidden=64, gradient_steps_per_round=50, total_steps=20_000, eval_every=5_000,
                        success_constraint_enabled=False, bootstrap_enabled=False)
    env = ArenaConfig()
    start = time.time()
    agent = make_agent(cfg, (), seed=3)
    pinned = critic_weights(agent).tolist() == [1.0]
    constrained = train(agent, env, seed=3)
    plain = train_sac(cfg, env, seed=3)
    a = write_csv(constrained.metrics, tmp_path / "constrained.csv")
    b = write_csv(plain.metrics, tmp_path / "plain.csv")
    same = Path(a).read_bytes() == Path(b).read_bytes()
    assert criterion("8 reduction identity (byte-identical metrics CSV)", same and pinned,
                     f"lambda_0 pinned to 1: {pinned}, {Path(a).stat().st_size} bytes identical: {same}; "
                     f"{time.time() - start:.0f}s")


def test_td3_variant(criterion):
    _, reached, hits = _bar_runs("td3")
    assert criterion("9 TD3-Lagrangian (success >= 0.7, rates <= d + 0.05 within 500k, >= 3/5)", hits >= 3,
                     f"{hits}/5 seeds; first step reaching the bar per seed: {reached}")
