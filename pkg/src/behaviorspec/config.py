"""Flat ``section.key = value`` run configuration files.

Example::

    # comments start with '#'
    run.name = desk-constrained
    run.seeds = 0, 1, 2, 3, 4
    arena.lava_rects = -1,-6,1,6 ; 4,4,6,9
    trainer.total_steps = 500000
    trainer.hidden = 64
    constraint.in_lava = upper 0.01
    constraint.not_looking = upper 0.10
    penalty.in_lava = 0.5
    grid.in_lava = 0.1, 0.3, 1, 3, 10
    grid.performance_floor = 0.8
    stability.feasible_threshold = 0.5

``arena.*`` and ``trainer.*`` keys are the fields of :class:`ArenaConfig` and
:class:`TrainerConfig`.  Any other key is rejected.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, fields, replace

from .agent import TrainerConfig
from .arena import ArenaConfig
from .core import LOWER, UPPER, ConstraintSpec


class ConfigError(ValueError):
    pass


RUN_KEYS = {"name": str, "seeds": "ints", "out": str}
GRID_KEYS = {"performance_floor": float, "eval_episodes": int, "early_stop": bool, "seed": int}
STABILITY_KEYS = {"switch_fraction": float, "feasible_threshold": float}


@dataclass
class ParsedConfig:
    run: dict = field(default_factory=dict)
    arena: ArenaConfig = field(default_factory=ArenaConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    constraints: list = field(default_factory=list)
    penalties: dict = field(default_factory=dict)
    grid_weights: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)
    stability: dict = field(default_factory=dict)


def _scalar(text: str):
    low = text.lower()
    if low in ("none", "null"):
        return None
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if re.fullmatch(r"[+-]?\d+", text):
        return int(text)
    try:
        return float(text)
    except ValueError:
        return text


def _floats(text):
    return [float(v) for v in text.replace(",", " ").split()]


def parse_lava(text: str):
    """``x0,z0,x1,z1`` quadruples separated by ``;``."""
    rects = []
    for chunk in text.split(";"):
        if not chunk.strip():
            continue
        vals = _floats(chunk)
        if len(vals) != 4:
            raise ConfigError(f"lava rectangle needs four numbers, got {chunk.strip()!r}")
        rects.append(tuple(vals))
    return tuple(rects)


def _coerce(default, value, key):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number")
        return float(value)
    return value


def _dataclass_updates(cls, items):
    known = {f.name: f for f in fields(cls)}
    base = cls()
    out = {}
    for key, raw, lineno in items:
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {cls.__name__.lower()}.{key}")
        if key == "lava_rects":
            out[key] = parse_lava(raw)
        elif key == "marker_position":
            out[key] = tuple(_floats(raw))
        else:
            out[key] = _coerce(getattr(base, key), _scalar(raw), f"line {lineno}")
    return out


def parse_config(text: str) -> ParsedConfig:
    arena_items, trainer_items = [], []
    cfg = ParsedConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        if "." not in key:
            raise ConfigError(f"line {lineno}: key {key!r} has no section")
        section, name = key.split(".", 1)
        if section == "arena":
            arena_items.append((name, value, lineno))
        elif section == "trainer":
            trainer_items.append((name, value, lineno))
        elif section == "constraint":
            parts = value.split()
            if len(parts) != 2 or parts[0] not in (UPPER, LOWER):
                raise ConfigError(f"line {lineno}: constraint needs 'upper <d>' or 'lower <d>'")
            try:
                cfg.constraints.append(ConstraintSpec(name, parts[0], float(parts[1])))
            except ValueError as exc:
                raise ConfigError(f"line {lineno}: {exc}") from None
        elif section == "penalty":
            cfg.penalties[name] = float(value)
        elif section == "grid" and name not in GRID_KEYS:
            cfg.grid_weights[name] = _floats(value)
        elif section in ("run", "grid", "stability"):
            table = {"run": RUN_KEYS, "grid": GRID_KEYS, "stability": STABILITY_KEYS}[section]
            if name not in table:
                raise ConfigError(f"line {lineno}: unknown key {key}")
            kind = table[name]
            if kind == "ints":
                parsed = [int(v) for v in value.replace(",", " ").split()]
            elif kind is str:
                parsed = value
            else:
                parsed = _coerce(kind(), _scalar(value), f"line {lineno}")
            getattr(cfg, section)[name] = parsed
        else:
            raise ConfigError(f"line {lineno}: unknown section {section!r}")
    try:
        cfg.arena = ArenaConfig(**_dataclass_updates(ArenaConfig, arena_items))
        cfg.trainer = TrainerConfig(**_dataclass_updates(TrainerConfig, trainer_items))
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def load_config(path) -> ParsedConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def override_trainer(cfg: ParsedConfig, **changes) -> ParsedConfig:
    return replace(cfg, trainer=replace(cfg.trainer, **changes))
