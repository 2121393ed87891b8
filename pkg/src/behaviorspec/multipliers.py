"""Lagrange multipliers on indicator-cost constraints.

Two parameterisations are supported:

``normalized``
    Multipliers are a softmax over ``(a0, z_1, ..., z_n)`` with a frozen dummy
    logit ``a0 = 0``; the a0 slot gives the reward weight ``lambda_0``.  All
    weights live on the simplex, so the Lagrangian stays bounded however long
    a constraint is violated.
``unnormalized``
    Classic Lagrangian: ``z`` holds the multipliers themselves, projected onto
    ``lambda >= 0`` by max-clipping, and the reward weight is fixed at 1.

Slots are ordered like the constraint specs; when a success constraint is
used it is the last slot and has a lower bound.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import ConstraintSpec
from .neural import Adam, adam_step

NORMALIZED = "normalized"
UNNORMALIZED = "unnormalized"
GRADIENTS = ("coordinate", "full")


@dataclass
class MultiplierState:
    z: np.ndarray
    adam: Adam
    mode: str = NORMALIZED
    a0: float = 0.0

    @property
    def n_slots(self):
        return len(self.z)

    def copy(self):
        return MultiplierState(self.z.copy(), self.adam.copy(), self.mode, self.a0)


@dataclass
class RateEstimate:
    rates: np.ndarray
    batch_size: int


def init_multipliers(n_slots, z_init=0.02, lr=0.03, mode=NORMALIZED) -> MultiplierState:
    if mode not in (NORMALIZED, UNNORMALIZED):
        raise ValueError(f"unknown multiplier mode {mode!r}")
    z = np.full(n_slots, float(z_init))
    return MultiplierState(z=z, adam=Adam(n_slots, lr=lr), mode=mode)


def normalized_multipliers(z, a0=0.0) -> np.ndarray:
    """Softmax over ``(a0, z)``; entry 0 is the reward weight lambda_0."""
    logits = np.concatenate([[a0], np.asarray(z, dtype=np.float64)])
    if not np.all(np.isfinite(logits)):
        raise ValueError("multiplier logits must be finite")
    e = np.exp(logits - logits.max())
    return e / e.sum()


def multiplier_weights(state: MultiplierState) -> np.ndarray:
    """``(lambda_0, lambda_1, ..., lambda_n)`` for either parameterisation."""
    if state.mode == NORMALIZED:
        return normalized_multipliers(state.z, state.a0)
    return np.concatenate([[1.0], state.z])


def cost_rate(events, k: int) -> float:
    """Fraction of batch rows on which indicator ``k`` fired."""
    events = np.asarray(events, dtype=np.float64)
    if events.ndim != 2 or len(events) == 0:
        raise ValueError("cost_rate needs a non-empty (batch, slots) array")
    return float(events[:, k].mean())


def estimate_rates(events) -> RateEstimate:
    events = np.asarray(events, dtype=np.float64)
    if events.ndim != 2 or len(events) == 0:
        raise ValueError("rate estimate needs a non-empty (batch, slots) array")
    return RateEstimate(rates=events.mean(axis=0), batch_size=len(events))


def bootstrap_weight(lambda_0: float, lambda_success: float) -> float:
    return max(lambda_0, lambda_success)


def violations(rates, specs: Sequence[ConstraintSpec]) -> np.ndarray:
    """Per-slot coefficient ``c_k`` of the multiplier loss ``sum_k c_k lambda_k``.

    ``d - J`` for upper bounds and ``J - d`` for lower bounds: negative means
    violated, so descending the loss raises the multiplier.
    """
    rates = np.asarray(rates, dtype=np.float64)
    if len(rates) != len(specs):
        raise ValueError(f"{len(rates)} rates for {len(specs)} constraint specs")
    return np.array([s.violation(r) for s, r in zip(specs, rates)])


def multiplier_loss_grad(state: MultiplierState, c, gradient="coordinate"):
    """Value and gradient wrt ``z`` of ``sum_k c_k lambda_k(z)``.

    ``coordinate`` keeps only the diagonal of the softmax Jacobian, so each
    ``z_k`` moves by the sign of its own slack.  ``full`` differentiates the
    whole softmax.  The unnormalized parameterisation ignores ``gradient``.
    """
    c = np.asarray(c, dtype=np.float64)
    lam = multiplier_weights(state)
    value = float(np.dot(c, lam[1:]))
    if state.mode == UNNORMALIZED:
        return value, c.copy()
    lk = lam[1:]
    if gradient == "coordinate":
        return value, lk * (1.0 - lk) * c
    if gradient == "full":
        return value, lk * (c - value)
    raise ValueError(f"unknown multiplier gradient {gradient!r}")


def multiplier_update(state: MultiplierState, rates, specs: Sequence[ConstraintSpec],
                      gradient="coordinate") -> MultiplierState:
    """One Adam descent step on the multiplier loss; returns a new state."""
    if isinstance(rates, RateEstimate):
        rates = rates.rates
    if len(specs) != state.n_slots:
        raise ValueError(f"{len(specs)} specs for {state.n_slots} multiplier slots")
    c = violations(rates, specs)
    _, grad = multiplier_loss_grad(state, c, gradient)
    out = state.copy()
    adam_step(out.z, grad, out.adam)
    if out.mode == UNNORMALIZED:
        np.maximum(out.z, 0.0, out=out.z)
    return out
