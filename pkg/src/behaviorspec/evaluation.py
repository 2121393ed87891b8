"""Rollout-based evaluation and indicator bookkeeping shared by trainers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import arena
from .arena import BEHAVIORS, EVENT_NAMES


def resolve_indicator(name: str):
    """Map a behavior name to ``(event index, inverted)``.

    Accepts the raw event names plus their negations, e.g. ``on_ground`` is
    the inverse of ``not_on_ground`` and ``not_in_lava`` the inverse of
    ``in_lava``.
    """
    if name in EVENT_NAMES:
        return EVENT_NAMES.index(name), False
    if name.startswith("not_") and name[4:] in EVENT_NAMES:
        return EVENT_NAMES.index(name[4:]), True
    if "not_" + name in EVENT_NAMES:
        return EVENT_NAMES.index("not_" + name), True
    raise KeyError(f"unknown behavior indicator {name!r}")


class IndicatorMap:
    """Selects (and possibly inverts) arena events into named slots."""

    def __init__(self, names):
        self.names = tuple(names)
        pairs = [resolve_indicator(n) for n in self.names]
        self.index = np.array([p[0] for p in pairs], dtype=int)
        self.inverted = np.array([p[1] for p in pairs], dtype=bool)

    def __call__(self, events):
        out = np.asarray(events, dtype=np.float64)[..., self.index]
        return np.where(self.inverted, 1.0 - out, out)

    def __len__(self):
        return len(self.names)


def report_names(extra=()):
    """Behavior names reported by evaluations: the five raw behaviors then extras."""
    names = list(BEHAVIORS)
    for n in extra:
        if n not in names and n != arena.SUCCESS:
            names.append(n)
    return tuple(names)


@dataclass
class EvalReport:
    success_rate: float
    rates: dict
    return_mean: float
    episodes: int
    steps: int = 0
    returns: list = field(default_factory=list)


def evaluate(act, env_config, episodes: int, seed, names=BEHAVIORS) -> EvalReport:
    """Roll out ``act(obs) -> action`` for ``episodes`` episodes.

    Behavior rate = (timesteps on which the indicator fired) / (timesteps).
    """
    if episodes < 1:
        raise ValueError("need at least one evaluation episode")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    imap = IndicatorMap(names)
    counts = np.zeros(len(imap))
    steps = 0
    successes = 0
    returns = []
    for _ in range(episodes):
        state, obs = arena.reset(env_config, rng)
        total = 0.0
        while True:
            state, obs, reward, done, truncated, ev = arena.step(state, act(obs), env_config)
            counts += imap(ev)
            steps += 1
            total += reward
            if done or truncated:
                successes += int(done)
                break
        returns.append(total)
    rates = {n: float(c / steps) for n, c in zip(imap.names, counts)}
    return EvalReport(success_rate=successes / episodes, rates=rates,
                      return_mean=float(np.mean(returns)), episodes=episodes, steps=steps,
                      returns=returns)
