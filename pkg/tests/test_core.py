import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from behaviorspec.core import (
    LOWER,
    UPPER,
    ConstraintSpec,
    InsufficientDataError,
    ReplayBuffer,
    Transition,
    event_vector,
)


def _buffer(capacity, obs_dim=2, act_dim=1, n_events=2):
    return ReplayBuffer(capacity, obs_dim, act_dim, n_events)


def _push(buf, ident):
    """Append a transition whose reward doubles as an id."""
    buf.add(np.full(buf.obs_dim, ident), np.zeros(buf.act_dim), float(ident),
            np.full(buf.obs_dim, ident + 1), False, np.zeros(buf.n_events))


class TestConstraintSpec:
    def test_threshold_range(self):
        with pytest.raises(ValueError):
            ConstraintSpec("in_lava", UPPER, 1.5)
        with pytest.raises(ValueError):
            ConstraintSpec("in_lava", "sideways", 0.1)

    def test_violation_signs(self):
        up = ConstraintSpec("in_lava", UPPER, 0.01)
        assert up.violation(0.2) < 0 and not up.satisfied(0.2)
        assert up.violation(0.0) > 0 and up.satisfied(0.0)
        low = ConstraintSpec("reached_goal", LOWER, 0.99)
        assert low.violation(0.5) < 0
        assert low.satisfied(0.995)


def test_event_vector_rejects_non_binary():
    assert np.array_equal(event_vector([1, 0, True]), [1.0, 0.0, 1.0])
    with pytest.raises(ValueError):
        event_vector([0.5, 1])


class TestReplayBuffer:
    def test_append_once(self):
        buf = _buffer(4)
        _push(buf, 1)
        assert len(buf) == 1

    def test_ring_keeps_latest(self):
        buf = _buffer(3)
        for i in range(1, 6):
            _push(buf, i)
        assert len(buf) == 3
        assert sorted(buf.rewards.tolist()) == [3.0, 4.0, 5.0]

    def test_full_capacity_count(self):
        n = 1_000_000
        buf = ReplayBuffer(n, 1, 1, 0)
        s, a, e = np.ones(1), np.zeros(1), np.zeros(0)
        for _ in range(n):
            buf.add(s, a, 0.0, s, False, e)
        assert len(buf) == n and buf.cursor == 0

    def test_shape_mismatch(self):
        buf = _buffer(3)
        with pytest.raises(ValueError, match="state shape"):
            buf.add(np.zeros(3), np.zeros(1), 0.0, np.zeros(2), False, np.zeros(2))
        with pytest.raises(ValueError, match="events"):
            buf.add(np.zeros(2), np.zeros(1), 0.0, np.zeros(2), False, np.zeros(3))

    def test_append_transition(self):
        buf = _buffer(3)
        buf.append(Transition(np.zeros(2), np.zeros(1), 1.0, np.ones(2), True, np.array([1.0, 0.0]), False))
        b = buf.last_n(1)
        assert b.dones[0] == 1.0 and b.events[0, 0] == 1.0

    def test_sample_single_item(self):
        buf = _buffer(5)
        _push(buf, 7)
        batch = buf.sample_uniform(3, np.random.default_rng(0), strict=False)
        assert batch.rewards.tolist() == [7.0, 7.0, 7.0]

    def test_sample_batch_size_and_determinism(self):
        buf = _buffer(3000)
        for i in range(3000):
            _push(buf, i)
        a = buf.sample_uniform(256, np.random.default_rng(5))
        b = buf.sample_uniform(256, np.random.default_rng(5))
        assert len(a) == 256
        assert np.array_equal(a.rewards, b.rewards)

    def test_sample_too_many(self):
        buf = _buffer(5)
        _push(buf, 1)
        with pytest.raises(InsufficientDataError):
            buf.sample_uniform(2, np.random.default_rng(0))
        with pytest.raises(InsufficientDataError):
            _buffer(5).sample_uniform(1, np.random.default_rng(0), strict=False)

    def test_uniform_frequencies(self):
        buf = _buffer(10)
        for i in range(10):
            _push(buf, i)
        rng = np.random.default_rng(123)
        draws = np.array([buf.sample_uniform(1, rng).rewards[0] for _ in range(10_000)])
        counts = np.bincount(draws.astype(int), minlength=10)
        sd = np.sqrt(10_000 * 0.1 * 0.9)
        assert np.all(np.abs(counts - 1000) < 5 * sd)

    def test_last_n_recency(self):
        buf = _buffer(10)
        for i in range(1, 6):
            _push(buf, i)
        assert buf.last_n(2).rewards.tolist() == [4.0, 5.0]

    def test_last_n_all(self):
        buf = _buffer(2000)
        for i in range(2000):
            _push(buf, i)
        assert buf.last_n(2000).rewards.tolist() == list(map(float, range(2000)))

    def test_last_n_after_wrap(self):
        buf = _buffer(3)
        for i in range(1, 5):
            _push(buf, i)
        assert buf.last_n(3).rewards.tolist() == [2.0, 3.0, 4.0]

    def test_last_n_too_many(self):
        buf = _buffer(3)
        _push(buf, 1)
        with pytest.raises(InsufficientDataError):
            buf.last_n(2)


@settings(max_examples=60, deadline=None)
@given(capacity=st.integers(1, 12), ids=st.lists(st.integers(0, 1000), min_size=1, max_size=40))
def test_ring_matches_shadow_list(capacity, ids):
    buf = _buffer(capacity)
    for i in ids:
        _push(buf, i)
    shadow = ids[-capacity:]
    assert len(buf) == len(shadow)
    assert buf.last_n(len(shadow)).rewards.tolist() == [float(i) for i in shadow]


@settings(max_examples=40, deadline=None)
@given(capacity=st.integers(2, 10), n_before=st.integers(2, 25), data=st.data())
def test_last_n_window_shifts_by_one(capacity, n_before, data):
    buf = _buffer(capacity)
    for i in range(n_before):
        _push(buf, i)
    n = data.draw(st.integers(1, min(len(buf), capacity - 1) if min(len(buf), capacity - 1) >= 1 else 1))
    before = buf.last_n(n).rewards.tolist()
    _push(buf, n_before)
    after = buf.last_n(n).rewards.tolist()
    assert after == before[1:] + [float(n_before)]
