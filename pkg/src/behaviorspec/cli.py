"""Command line entry point: ``behaviorspec {train,eval,grid,stability,oracle}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import harness, oracle
from .agent import load_agent
from .config import ConfigError, load_config
from .plotting import line_plot, plot_metrics


def _seeds(args, parsed):
    if args.seeds:
        return [int(s) for s in args.seeds.replace(",", " ").split()]
    if args.seed is not None:
        return [args.seed]
    return parsed.run.get("seeds", [0])


def _out(args, parsed, default):
    return args.out or parsed.run.get("out") or default


def _run_config(parsed, seeds, out):
    return harness.RunConfig(name=parsed.run.get("name", "run"), arena=parsed.arena, trainer=parsed.trainer,
                             constraints=parsed.constraints, seeds=seeds, out_dir=out,
                             penalties=parsed.penalties)


def cmd_train(args):
    parsed = load_config(args.config)
    out = _out(args, parsed, "runs/train")
    config = _run_config(parsed, _seeds(args, parsed), out)
    res = harness.run_experiment(config, out, workers=args.workers, checkpoints=True)
    for seed, rows in res["per_seed"].items():
        plot_metrics(rows, os.path.join(out, "plots"), prefix=f"seed_{seed}_")
    for seed, reason in res["failures"].items():
        print(f"seed {seed} failed: {reason}", file=sys.stderr)
    if res["summary"]:
        last = res["summary"][-1]
        print(f"step {int(last['step'])}: success {last['success_rate_mean']:.3f} "
              f"return {last['return_mean_mean']:.3f} over {int(last['n_seeds'])} seeds")
    return 0 if res["per_seed"] else 1


def cmd_eval(args):
    parsed = load_config(args.config)
    if not args.checkpoint:
        raise SystemExit("eval needs --checkpoint <dir>")
    agent = load_agent(args.checkpoint)
    seed = _seeds(args, parsed)[0]
    report = harness.evaluate(agent, parsed.arena, args.episodes, seed)
    row = {"return_mean": report.return_mean, "success_rate": report.success_rate}
    row.update({f"rate_{k}": v for k, v in report.rates.items()})
    row["class"] = harness.classify_feasible(report, parsed.constraints,
                                             parsed.grid.get("performance_floor", 0.8))
    out = _out(args, parsed, "runs/eval")
    harness.write_csv([row], os.path.join(out, "eval.csv"))
    print(json.dumps(row, indent=2))
    return 0


def cmd_grid(args):
    parsed = load_config(args.config)
    if not parsed.grid_weights:
        raise ConfigError("grid needs at least one 'grid.<behavior> = w1, w2, ...' line")
    seed = _seeds(args, parsed)[0] if (args.seed is not None or args.seeds) else parsed.grid.get("seed", 0)
    grid = harness.GridSpec(weights=parsed.grid_weights, trainer=parsed.trainer, arena=parsed.arena,
                            specs=parsed.constraints,
                            performance_floor=parsed.grid.get("performance_floor", 0.8),
                            seed=seed, early_stop=parsed.grid.get("early_stop", True))
    out = _out(args, parsed, "runs/grid")
    rows = harness.run_reward_engineering_grid(grid, os.path.join(out, "grid.csv"), workers=args.workers)
    print(f"{len(rows)} cells, feasible-performant fraction {harness.class_fraction(rows):.3f}")
    return 0


def cmd_stability(args):
    parsed = load_config(args.config)
    out = _out(args, parsed, "runs/stability")
    config = _run_config(parsed, _seeds(args, parsed), out)
    res = harness.run_stability_experiment(
        config, switch_fraction=parsed.stability.get("switch_fraction", 0.75),
        feasible_threshold=parsed.stability.get("feasible_threshold", 0.5), out_dir=out, workers=args.workers)
    series = {}
    for mode, rows in res["log"].items():
        series[mode] = ([r["step"] for r in rows], [r["lambda_1"] for r in rows])
    with open(os.path.join(out, "lambda.svg"), "w") as fh:
        fh.write(line_plot(series, title="constraint multiplier", xlabel="environment steps", ylabel="lambda_1"))
    for mode, rows in res["log"].items():
        peak = max((r["lambda_1"] for r in rows), default=float("nan"))
        print(f"{mode}: max lambda_1 {peak:.4g}, halted: {res['halted'][mode]}")
    return 0


def cmd_oracle(args):
    with open(args.config) as fh:
        m = oracle.parse_cmdp(fh.read())
    out = args.out or "runs/oracle"
    grid = oracle.lambda_grid(m.K, np.linspace(0.0, args.grid_max, args.grid_points))
    dual = oracle.dual_minimize(m, grid)
    pi_free, _ = oracle.lagrangian_best_response(m, np.zeros(m.K))
    rows = [{"quantity": "unconstrained_return", "value": oracle.exact_return(m, pi_free, m.R)},
            {"quantity": "dual_value", "value": dual.value},
            {"quantity": "primal_value", "value": dual.primal_value}]
    rows += [{"quantity": f"lambda_star_{k + 1}", "value": float(v)} for k, v in enumerate(dual.lam)]
    if dual.primal_rates is not None:
        rows += [{"quantity": f"primal_rate_{k + 1}", "value": float(v)} for k, v in enumerate(dual.primal_rates)]
    if args.gda_steps > 0:
        trace = oracle.gda_reference(m, steps=args.gda_steps)
        rows.append({"quantity": "gda_average_return", "value": oracle.exact_return(m, trace.average_policy, m.R)})
        rows += [{"quantity": f"gda_average_rate_{k + 1}", "value": float(v)}
                 for k, v in enumerate(oracle.behavior_rates(m, trace.average_policy))]
        rows.append({"quantity": "gda_diverged_at", "value": trace.diverged_at})
    harness.write_csv(rows, os.path.join(out, "oracle.csv"))
    for r in rows:
        print(f"{r['quantity']}: {r['value']}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="behaviorspec", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn in (("train", cmd_train), ("eval", cmd_eval), ("grid", cmd_grid),
                     ("stability", cmd_stability), ("oracle", cmd_oracle)):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--seeds", default=None, help="comma separated list")
        sp.add_argument("--out", default=None)
        sp.add_argument("--workers", type=int, default=1)
        sp.set_defaults(func=fn)
        if name == "eval":
            sp.add_argument("--checkpoint", default=None)
            sp.add_argument("--episodes", type=int, default=10)
        if name == "oracle":
            sp.add_argument("--grid-max", type=float, default=10.0)
            sp.add_argument("--grid-points", type=int, default=101)
            sp.add_argument("--gda-steps", type=int, default=5000)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
