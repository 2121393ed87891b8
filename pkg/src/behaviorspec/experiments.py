"""Desk-scale experiment protocols with a per-seed result cache.

Each protocol is a preset from ``configs/`` plus a bar to check at every
evaluation.  Finished seeds are stored as JSON under a key built from the
parsed preset and a digest of the training code (comments and docstrings
excluded), so repeated checks reuse the hours of training already done and
any change to the numerics invalidates them.
"""

from __future__ import annotations

import ast
import hashlib
import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass
from pathlib import Path

from . import harness
from .config import ParsedConfig, load_config

log = logging.getLogger(__name__)

ROOT = Path(__file__).resolve().parents[2]
CONFIG_DIR = ROOT / "configs"
RESULTS_DIR = Path(os.environ.get("BEHAVIORSPEC_RESULTS", ROOT / "results" / "acceptance"))

TRAINING_MODULES = ("core", "arena", "neural", "multipliers", "agent", "evaluation", "harness", "sac",
                    "config", "experiments")


def _strip_docstrings(tree):
    for node in ast.walk(tree):
        body = getattr(node, "body", None)
        if isinstance(body, list) and body and isinstance(body[0], ast.Expr) \
                and isinstance(getattr(body[0], "value", None), ast.Constant) \
                and isinstance(body[0].value.value, str):
            node.body = body[1:] or [ast.Pass()]
    return tree


def source_digest() -> str:
    """Hash of the training code's syntax tree; comments and docstrings do not count."""
    h = hashlib.sha256()
    pkg = Path(__file__).resolve().parent
    for name in TRAINING_MODULES:
        tree = _strip_docstrings(ast.parse((pkg / f"{name}.py").read_text()))
        h.update(name.encode())
        h.update(ast.dump(tree).encode())
    return h.hexdigest()[:16]


def config_key(parsed: ParsedConfig, extra=None) -> str:
    payload = {"run": parsed.run, "arena": asdict(parsed.arena), "trainer": asdict(parsed.trainer),
               "constraints": [asdict(c) for c in parsed.constraints], "penalties": parsed.penalties,
               "grid_weights": parsed.grid_weights, "grid": parsed.grid, "stability": parsed.stability,
               "extra": extra, "code": source_digest()}
    return hashlib.sha256(json.dumps(payload, sort_keys=True, default=str).encode()).hexdigest()[:16]


def _cached(path: Path, compute):
    if path.exists():
        return json.loads(path.read_text())
    value = compute()
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(value, indent=1, allow_nan=True))
    tmp.replace(path)
    return value


@dataclass(frozen=True)
class Bar:
    """Success floor plus per-behavior rate ceilings, checked on one evaluation row."""
    success: float
    ceilings: tuple = ()        # (behavior name, max rate)

    def met(self, row) -> bool:
        if not row["success_rate"] >= self.success:
            return False
        return all(row[f"rate_{name}"] <= cap for name, cap in self.ceilings)


def constraint_bar(parsed: ParsedConfig, success: float, slack: float) -> Bar:
    return Bar(success, tuple((c.name, c.threshold + slack) for c in parsed.constraints))


def seed_until_bar(preset: str, seed: int, bar: Bar, results_dir=None) -> dict:
    """Train one seed of ``preset`` and stop at the first evaluation meeting ``bar``.

    Returns ``{"seed", "reached_step" (None if never), "halted", "rows", "seconds"}``.
    """
    parsed = load_config(CONFIG_DIR / f"{preset}.cfg")
    key = config_key(parsed, extra={"bar": asdict(bar), "seed": seed})
    path = Path(results_dir or RESULTS_DIR) / preset / key / f"seed_{seed}.json"

    def compute():
        config = harness.RunConfig(parsed.run.get("name", preset), parsed.arena, parsed.trainer,
                                   parsed.constraints, seeds=(seed,), penalties=parsed.penalties)
        start = time.time()
        result = harness.run_training(config, seed, callback=bar.met)
        reached = result.metrics[-1]["step"] if result.stopped_early else None
        log.info("%s seed %d: reached %s after %.0fs", preset, seed, reached, time.time() - start)
        return {"seed": seed, "reached_step": reached, "halted": result.halted, "rows": result.metrics,
                "seconds": time.time() - start}

    return _cached(path, compute)


def preset_seeds(preset: str):
    return list(load_config(CONFIG_DIR / f"{preset}.cfg").run.get("seeds", [0]))


def bar_experiment(preset: str, bar: Bar, results_dir=None) -> list:
    return [seed_until_bar(preset, s, bar, results_dir) for s in preset_seeds(preset)]


def grid_experiment(preset: str, results_dir=None, workers=1) -> list:
    """Reward-engineering grid rows for ``preset`` (cached as one unit)."""
    parsed = load_config(CONFIG_DIR / f"{preset}.cfg")
    key = config_key(parsed)
    path = Path(results_dir or RESULTS_DIR) / preset / key / "grid.json"

    def compute():
        grid = harness.GridSpec(weights=parsed.grid_weights, trainer=parsed.trainer, arena=parsed.arena,
                                specs=parsed.constraints,
                                performance_floor=parsed.grid.get("performance_floor", 0.8),
                                seed=parsed.grid.get("seed", 0), early_stop=parsed.grid.get("early_stop", True))
        return harness.run_reward_engineering_grid(grid, workers=workers)

    return _cached(path, compute)


def stability_experiment(preset="desk_stability", results_dir=None) -> dict:
    parsed = load_config(CONFIG_DIR / f"{preset}.cfg")
    key = config_key(parsed)
    path = Path(results_dir or RESULTS_DIR) / preset / key / "stability.json"

    def compute():
        config = harness.RunConfig(parsed.run.get("name", preset), parsed.arena, parsed.trainer,
                                   parsed.constraints, seeds=parsed.run.get("seeds", [0]))
        return harness.run_stability_experiment(
            config, switch_fraction=parsed.stability.get("switch_fraction", 0.75),
            feasible_threshold=parsed.stability.get("feasible_threshold", 0.5))

    out = _cached(path, compute)
    out["trainer"] = asdict(parsed.trainer)
    out["feasible_threshold"] = parsed.stability.get("feasible_threshold", 0.5)
    out["constraint"] = parsed.constraints[0].name
    return out


def finite(values) -> bool:
    return all(isinstance(v, (int, float)) and math.isfinite(v) for v in values)


def acceptance_bars() -> dict:
    """Preset and bar for every seed-count criterion."""
    def bar(preset, success, slack=0.05):
        return preset, constraint_bar(load_config(CONFIG_DIR / f"{preset}.cfg"), success, slack)

    return {
        "unconstrained": bar("desk_unconstrained", 0.9),
        "constrained": bar("desk_constrained", 0.8),
        "no_bootstrap": bar("desk_no_bootstrap", 0.8),
        "td3": bar("desk_td3", 0.7),
    }
