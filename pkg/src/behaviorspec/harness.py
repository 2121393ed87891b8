"""Experiment orchestration: seeded runs, reward-engineering grids, stability runs.

All outputs are CSV files.  Jobs (seeds, grid cells, multiplier modes) share
no mutable state; with ``workers > 1`` they run in a process pool and results
are merged by sorted job key, so the bytes written never depend on the pool.
"""

from __future__ import annotations

import csv
import itertools
import logging
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import arena
from .agent import TrainerConfig, TrainResult, act, make_agent, save_agent, train
from .arena import ArenaConfig
from .core import LOWER, ConstraintSpec
from .evaluation import EvalReport, evaluate as _rollouts, report_names, resolve_indicator
from .multipliers import NORMALIZED, UNNORMALIZED

log = logging.getLogger(__name__)

FEASIBLE_PERFORMANT = "feasible-performant"
FEASIBLE = "feasible"
INFEASIBLE = "infeasible"
FAILED = "failed"
CLASS_ORDER = {INFEASIBLE: 0, FEASIBLE: 1, FEASIBLE_PERFORMANT: 2}

__all__ = [
    "EvalReport", "RunConfig", "GridSpec", "evaluate", "classify_feasible",
    "run_training", "run_experiment", "run_reward_engineering_grid",
    "run_stability_experiment", "write_csv", "read_csv", "summarize",
]


@dataclass
class RunConfig:
    name: str
    arena: ArenaConfig = field(default_factory=ArenaConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    constraints: tuple = ()
    seeds: tuple = (0,)
    out_dir: Optional[str] = None
    penalties: dict = field(default_factory=dict)

    def __post_init__(self):
        self.constraints = tuple(self.constraints)
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise ValueError("a run needs at least one seed")
        for spec in self.constraints:
            if not 0.0 <= spec.threshold <= 1.0:
                raise ValueError(f"threshold of {spec.name} outside [0, 1]")
            resolve_indicator(spec.name)


@dataclass
class GridSpec:
    weights: dict                       # behavior name -> list of penalty weights
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    arena: ArenaConfig = field(default_factory=ArenaConfig)
    specs: tuple = ()                   # feasibility thresholds
    performance_floor: float = 0.8
    seed: int = 0
    early_stop: bool = True

    def __post_init__(self):
        if not self.weights:
            raise ValueError("a grid needs at least one weight list")
        for name, ws in self.weights.items():
            resolve_indicator(name)
            if len(ws) == 0 or any(w < 0 for w in ws):
                raise ValueError(f"weights for {name} must be a non-empty list of values >= 0")
        self.specs = tuple(self.specs)

    def cells(self):
        names = list(self.weights)
        return [dict(zip(names, combo)) for combo in itertools.product(*self.weights.values())]


# ---------------------------------------------------------------------------
# evaluation and classification


def evaluate(agent, env_config: ArenaConfig, episodes: int, seed, names=None) -> EvalReport:
    """Deterministic-action rollouts of a trained agent."""
    if names is None:
        names = report_names([s.name for s in agent.specs])
    return _rollouts(lambda o: act(agent, o, "deterministic"), env_config, episodes, seed, names)


def _rate_of(report, name):
    if name == arena.SUCCESS:
        return report.success_rate
    return report.rates[name]


def classify_feasible(report: EvalReport, specs: Sequence[ConstraintSpec], performance_floor: float) -> str:
    for spec in specs:
        rate = _rate_of(report, spec.name)
        if spec.bound == LOWER and rate < spec.threshold:
            return INFEASIBLE
        if spec.bound != LOWER and rate > spec.threshold:
            return INFEASIBLE
    return FEASIBLE_PERFORMANT if report.success_rate >= performance_floor else FEASIBLE


def report_from_row(row: dict) -> EvalReport:
    rates = {k[len("rate_"):]: v for k, v in row.items() if k.startswith("rate_")}
    return EvalReport(success_rate=row["success_rate"], rates=rates,
                      return_mean=row["return_mean"], episodes=0)


# ---------------------------------------------------------------------------
# csv helpers


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(rows, path, columns=None):
    """Write dict rows; missing entries are left empty.  Floats use ``repr``."""
    if columns is None:
        columns = []
        for row in rows:
            for k in row:
                if k not in columns:
                    columns.append(k)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) if c in row else "" for c in columns])
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        parsed = {}
        for k, v in row.items():
            try:
                parsed[k] = float(v) if v != "" else float("nan")
            except ValueError:
                parsed[k] = v
        out.append(parsed)
    return out


def _map(fn, jobs, workers):
    """Run ``fn`` on every job, returning results in job order."""
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


# ---------------------------------------------------------------------------
# single runs and multi-seed experiments


def run_training(config: RunConfig, seed: int, callback=None, schedule=(), trainer=None) -> TrainResult:
    trainer = config.trainer if trainer is None else trainer
    agent = make_agent(trainer, config.constraints, seed=seed)
    extra = [s.name for s in config.constraints] + list(config.penalties)
    return train(agent, config.arena, seed, penalties=config.penalties or None,
                 schedule=schedule, callback=callback, report_extra=extra)


def _seed_job(job):
    config, seed, checkpoint_dir = job
    try:
        result = run_training(config, seed)
    except Exception as exc:                      # recorded, not fatal
        return seed, None, f"{type(exc).__name__}: {exc}"
    if checkpoint_dir:
        save_agent(result.agent, os.path.join(checkpoint_dir, f"checkpoint_seed_{seed}"))
    if result.halted:
        return seed, result.metrics, result.halted
    return seed, result.metrics, None


def summarize(per_seed: dict) -> list:
    """Mean and standard error across seeds at every evaluation step."""
    seeds = sorted(per_seed)
    if not seeds or not all(per_seed[s] for s in seeds):
        return []
    steps = sorted(set.intersection(*[{r["step"] for r in per_seed[s]} for s in seeds]))
    columns = [c for c in per_seed[seeds[0]][0] if c != "step"]
    out = []
    for step in steps:
        rows = [next(r for r in per_seed[s] if r["step"] == step) for s in seeds]
        summary = {"step": step, "n_seeds": len(rows)}
        for c in columns:
            vals = np.array([float(r.get(c, float("nan"))) for r in rows])
            summary[f"{c}_mean"] = float(vals.mean())
            summary[f"{c}_stderr"] = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
        out.append(summary)
    return out


def run_experiment(config: RunConfig, out_dir=None, workers=1, checkpoints=False) -> dict:
    """Train every seed; write ``seed_<s>.csv`` files and ``summary.csv``.

    With ``checkpoints`` each trained agent is also saved under
    ``<out_dir>/checkpoint_seed_<s>``.

    Returns ``{"per_seed": {seed: rows}, "summary": rows, "failures": {seed: reason}}``.
    """
    out_dir = out_dir or config.out_dir
    ckpt = out_dir if (checkpoints and out_dir) else None
    results = _map(_seed_job, [(config, s, ckpt) for s in config.seeds], workers)
    per_seed, failures = {}, {}
    for seed, rows, err in sorted(results, key=lambda r: r[0]):
        if out_dir and rows:
            write_csv(rows, os.path.join(out_dir, f"seed_{seed}.csv"))
        if err is not None:
            failures[seed] = err
            warnings.warn(f"seed {seed} failed and is excluded from the summary: {err}")
            continue
        per_seed[seed] = rows
    summary = summarize(per_seed)
    if out_dir:
        write_csv(summary, os.path.join(out_dir, "summary.csv"))
        if failures:
            write_csv([{"seed": s, "reason": r} for s, r in sorted(failures.items())],
                      os.path.join(out_dir, "failures.csv"))
    return {"per_seed": per_seed, "summary": summary, "failures": failures}


# ---------------------------------------------------------------------------
# reward engineering


def _grid_job(job):
    grid, cell = job
    trainer = replace(grid.trainer, success_constraint_enabled=False, bootstrap_enabled=False)
    names = report_names(list(cell) + [s.name for s in grid.specs])
    row = {f"w_{n}": float(w) for n, w in cell.items()}

    def stop(metrics):
        if not grid.early_stop:
            return False
        return classify_feasible(report_from_row(metrics), grid.specs, grid.performance_floor) == FEASIBLE_PERFORMANT

    try:
        agent = make_agent(trainer, (), seed=grid.seed)
        result = train(agent, grid.arena, grid.seed, penalties=dict(cell), callback=stop, report_extra=names)
        if result.halted or not result.metrics:
            raise RuntimeError(result.halted or "no evaluation was run")
        last = result.metrics[-1]
    except Exception as exc:                      # a failed cell does not stop the grid
        log.warning("grid cell %s failed: %s", cell, exc)
        row.update(return_mean=float("nan"), success_rate=float("nan"))
        row.update({f"rate_{n}": float("nan") for n in _grid_rate_names(grid)})
        row.update({"class": FAILED, "steps": 0})
        return row
    report = report_from_row(last)
    row.update(return_mean=report.return_mean, success_rate=report.success_rate)
    row.update({f"rate_{n}": _rate_of(report, n) for n in _grid_rate_names(grid)})
    row["class"] = classify_feasible(report, grid.specs, grid.performance_floor)
    row["steps"] = int(last["step"])
    return row


def _grid_rate_names(grid):
    names = list(grid.weights)
    for s in grid.specs:
        if s.name not in names and s.name != arena.SUCCESS:
            names.append(s.name)
    return names


def run_reward_engineering_grid(grid: GridSpec, out_path=None, workers=1) -> list:
    """Train an unconstrained agent per weight tuple on the penalised reward.

    Every cell uses the same seed.  With ``early_stop`` a cell ends at the
    first evaluation that is already feasible-performant.
    """
    cells = grid.cells()
    rows = _map(_grid_job, [(grid, c) for c in cells], workers)
    key = lambda r: tuple(r[f"w_{n}"] for n in grid.weights)
    rows = sorted(rows, key=key)
    if out_path:
        cols = [f"w_{n}" for n in grid.weights] + ["return_mean", "success_rate"]
        cols += [f"rate_{n}" for n in _grid_rate_names(grid)] + ["class", "steps"]
        write_csv(rows, out_path, cols)
    return rows


def class_fraction(rows, cls=FEASIBLE_PERFORMANT) -> float:
    return sum(r["class"] == cls for r in rows) / len(rows)


# ---------------------------------------------------------------------------
# multiplier stability


def _stability_job(job):
    config, mode, seed, switch_step, feasible = job
    trainer = replace(config.trainer, multiplier_mode=mode)
    result = run_training(config, seed, schedule=[(switch_step, 0, feasible)], trainer=trainer)
    return mode, result


def run_stability_experiment(config: RunConfig, switch_fraction=0.75, feasible_threshold=0.5,
                             out_dir=None, workers=1) -> dict:
    """Impossible-then-feasible threshold under both multiplier modes.

    ``config`` must hold exactly one constraint (its impossible threshold);
    at ``switch_fraction`` of the run it is replaced by ``feasible_threshold``.
    Both modes use the first seed of ``config``.  Returns per-mode multiplier
    logs (column ``mode`` added) and evaluation metrics.
    """
    if len(config.constraints) != 1:
        raise ValueError("the stability experiment needs exactly one constraint")
    if not 0.0 < switch_fraction < 1.0:
        raise ValueError("switch_fraction must lie in (0, 1)")
    trainer = replace(config.trainer, success_constraint_enabled=False, bootstrap_enabled=False)
    config = replace(config, trainer=trainer)
    switch_step = int(round(switch_fraction * trainer.total_steps))
    seed = config.seeds[0]
    jobs = [(config, mode, seed, switch_step, feasible_threshold) for mode in (NORMALIZED, UNNORMALIZED)]
    out = {"switch_step": switch_step, "log": {}, "metrics": {}, "halted": {}}
    for mode, result in sorted(_map(_stability_job, jobs, workers), key=lambda r: r[0]):
        out["log"][mode] = [dict(mode=mode, **row) for row in result.multiplier_log]
        out["metrics"][mode] = [dict(mode=mode, **row) for row in result.metrics]
        out["halted"][mode] = result.halted
        if result.halted:
            log.warning("%s run halted: %s", mode, result.halted)
    if out_dir:
        write_csv(out["log"][NORMALIZED] + out["log"][UNNORMALIZED], os.path.join(out_dir, "multipliers.csv"))
        write_csv(out["metrics"][NORMALIZED] + out["metrics"][UNNORMALIZED], os.path.join(out_dir, "metrics.csv"))
    return out
