"""Shared domain types: constraint specs, transitions and the replay buffer."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

UPPER = "upper"
LOWER = "lower"


class InsufficientDataError(ValueError):
    """Raised when a buffer holds fewer transitions than requested."""


@dataclass(frozen=True)
class ConstraintSpec:
    name: str
    bound: str
    threshold: float

    def __post_init__(self):
        if self.bound not in (UPPER, LOWER):
            raise ValueError(f"bound must be {UPPER!r} or {LOWER!r}, got {self.bound!r}")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError(f"threshold for {self.name} must lie in [0, 1], got {self.threshold}")

    def violation(self, rate: float) -> float:
        """Signed slack: positive when satisfied, negative when violated."""
        if self.bound == UPPER:
            return self.threshold - rate
        return rate - self.threshold

    def satisfied(self, rate: float, tol: float = 0.0) -> bool:
        return self.violation(rate) >= -tol


def event_vector(flags: Sequence) -> np.ndarray:
    """Coerce indicator flags into a float array of zeros and ones."""
    arr = np.asarray(flags, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError("event vector must be one-dimensional")
    if not np.all((arr == 0.0) | (arr == 1.0)):
        raise ValueError(f"event flags must be 0 or 1, got {arr}")
    return arr


@dataclass
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    done: bool
    events: np.ndarray
    truncated: bool = False


@dataclass
class Batch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray
    truncated: np.ndarray
    events: np.ndarray

    def __len__(self):
        return len(self.rewards)


class ReplayBuffer:
    """Fixed-capacity ring of transitions stored column-wise.

    Supports uniform sampling with replacement (critic/policy batches) and
    retrieval of the most recent ``n`` transitions in insertion order
    (multiplier batches).
    """

    def __init__(self, capacity: int, obs_dim: int, act_dim: int, n_events: int,
                 dtype=np.float32):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.n_events = n_events
        self.states = np.zeros((capacity, obs_dim), dtype=dtype)
        self.next_states = np.zeros((capacity, obs_dim), dtype=dtype)
        self.actions = np.zeros((capacity, act_dim), dtype=dtype)
        self.rewards = np.zeros(capacity, dtype=np.float64)
        self.dones = np.zeros(capacity, dtype=np.float64)
        self.truncated = np.zeros(capacity, dtype=bool)
        self.events = np.zeros((capacity, n_events), dtype=np.float64)
        self.cursor = 0
        self.count = 0

    def __len__(self):
        return self.count

    def add(self, state, action, reward, next_state, done, events, truncated=False):
        state = np.asarray(state)
        next_state = np.asarray(next_state)
        action = np.asarray(action)
        events = np.asarray(events)
        if state.shape != (self.obs_dim,) or next_state.shape != (self.obs_dim,):
            raise ValueError(f"state shape {state.shape}/{next_state.shape} does not match "
                             f"buffer observation dim {self.obs_dim}")
        if action.shape != (self.act_dim,):
            raise ValueError(f"action shape {action.shape} does not match buffer action dim {self.act_dim}")
        if events.shape != (self.n_events,):
            raise ValueError(f"events shape {events.shape} does not match buffer event count {self.n_events}")
        i = self.cursor
        self.states[i] = state
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_states[i] = next_state
        self.dones[i] = float(done)
        self.truncated[i] = bool(truncated)
        self.events[i] = events
        self.cursor = (i + 1) % self.capacity
        self.count = min(self.count + 1, self.capacity)

    def append(self, t: Transition):
        self.add(t.state, t.action, t.reward, t.next_state, t.done, t.events, t.truncated)
        return self

    def _gather(self, idx) -> Batch:
        return Batch(
            states=self.states[idx],
            actions=self.actions[idx],
            rewards=self.rewards[idx],
            next_states=self.next_states[idx],
            dones=self.dones[idx],
            truncated=self.truncated[idx],
            events=self.events[idx],
        )

    def sample_uniform(self, n: int, rng: np.random.Generator, strict: bool = True) -> Batch:
        """``n`` independent uniform draws with replacement.

        With ``strict`` (the trainer's setting) asking for more items than are
        stored signals insufficient warmup; otherwise any non-empty buffer can
        be oversampled.
        """
        if n < 1:
            raise ValueError("batch size must be at least 1")
        if self.count == 0 or (strict and n > self.count):
            raise InsufficientDataError(
                f"requested {n} samples but buffer holds {self.count}; still warming up")
        idx = rng.integers(0, self.count, size=n)
        return self._gather(idx)

    def last_n(self, n: int) -> Batch:
        if n > self.count:
            raise InsufficientDataError(f"requested last {n} transitions but buffer holds {self.count}")
        idx = (self.cursor - n + np.arange(n)) % self.capacity
        return self._gather(idx)

    def transitions(self, batch: Batch):
        """Unpack a batch back into Transition records (mostly for tests)."""
        return [Transition(batch.states[i], batch.actions[i], float(batch.rewards[i]),
                           batch.next_states[i], bool(batch.dones[i]), batch.events[i],
                           bool(batch.truncated[i]))
                for i in range(len(batch))]
