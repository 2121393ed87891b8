import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from behaviorspec import arena
from behaviorspec.arena import (
    ACT_DIM,
    OBS_DIM,
    ArenaConfig,
    ArenaState,
    SpawnError,
    events,
    invert_indicator,
    observe,
    reset,
    step,
)

CFG = ArenaConfig()
STILL = np.array([0.0, 0.0, 0.0, -1.0, -1.0])


def _state(**kw):
    base = dict(x=0.0, z=0.0, heading=0.0, vx=0.0, vz=0.0, energy=1.0, airborne_remaining=0,
                goal_x=5.0, goal_z=5.0)
    base.update(kw)
    return ArenaState(**base)


def _toward_goal(state):
    """Forward at full speed after turning to face the goal (yaw limited)."""
    ang = math.atan2(state.goal_z - state.z, state.goal_x - state.x) - state.heading
    ang = (ang + math.pi) % (2 * math.pi) - math.pi
    yaw = max(-1.0, min(1.0, ang / CFG.max_yaw))
    return np.array([1.0, 0.0, yaw, -1.0, -1.0])


class TestConfig:
    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            ArenaConfig(half_extent=0)
        with pytest.raises(ValueError):
            ArenaConfig(goal_radius=20)
        with pytest.raises(ValueError):
            ArenaConfig(fov_half_angle=4.0)
        with pytest.raises(ValueError):
            ArenaConfig(energy_drain=0.0)
        with pytest.raises(ValueError):
            ArenaConfig(lava_rects=((5, 5, 12, 6),))


class TestReset:
    def test_deterministic(self):
        a, oa = reset(CFG, 11)
        b, ob = reset(CFG, 11)
        assert a == b and np.array_equal(oa, ob)

    def test_goal_distance_and_lava_free(self):
        cfg = ArenaConfig(lava_rects=((-3.0, -3.0, 3.0, 3.0),))
        rng = np.random.default_rng(0)
        for _ in range(1000):
            s, _ = reset(cfg, rng)
            assert math.hypot(s.x - s.goal_x, s.z - s.goal_z) >= 2 * cfg.goal_radius
            assert not (-3 < s.x < 3 and -3 < s.z < 3)
            assert not (-3 < s.goal_x < 3 and -3 < s.goal_z < 3)
            assert s.energy == 1.0 and s.step_index == 0

    def test_unsatisfiable_spawn(self):
        cfg = ArenaConfig(half_extent=2.0, goal_radius=0.5, lava_rects=((-2.0, -2.0, 2.0, 2.0),))
        with pytest.raises(SpawnError):
            reset(cfg, 0)


class TestEvents:
    def test_centered_in_lava(self):
        cfg = ArenaConfig(lava_rects=((-1.0, -1.0, 1.0, 1.0),))
        assert events(_state(), STILL, cfg)[2] == 1.0

    def test_airborne_suppresses_lava(self):
        cfg = ArenaConfig(lava_rects=((-1.0, -1.0, 1.0, 1.0),))
        ev = events(_state(airborne_remaining=2), STILL, cfg)
        assert ev[2] == 0.0 and ev[1] == 1.0

    def test_marker_along_heading_is_looked_at(self):
        s = _state(x=-5.0, z=0.0, heading=0.0)
        assert events(s, STILL, CFG)[0] == 0.0
        assert events(replace(s, heading=math.pi), STILL, CFG)[0] == 1.0

    def test_speed_limit_strict(self):
        assert events(_state(vx=CFG.speed_limit), STILL, CFG)[3] == 0.0
        assert events(_state(vx=CFG.speed_limit + 1e-9), STILL, CFG)[3] == 1.0

    def test_energy_floor_strict(self):
        assert events(_state(energy=CFG.energy_floor), STILL, CFG)[4] == 0.0
        assert events(_state(energy=CFG.energy_floor - 1e-9), STILL, CFG)[4] == 1.0

    def test_goal_inclusive(self):
        s = _state(x=5.0 - CFG.goal_radius, z=5.0)
        assert events(s, STILL, CFG)[5] == 1.0


def test_invert_indicator():
    assert invert_indicator(1) == 0
    assert invert_indicator(0) == 1
    for f in (0, 1):
        assert invert_indicator(invert_indicator(f)) == f


class TestStep:
    def test_reaching_goal_terminates_with_bonus(self):
        s = _state(x=5.0 - CFG.goal_radius - 0.3, z=5.0, heading=0.0)
        s2, _, r, done, trunc, ev = step(s, np.array([1.0, 0, 0, -1, -1]), CFG)
        assert done and not trunc and ev[5] == 1.0
        assert r == pytest.approx(1.0 + CFG.shaping_scale * 0.5)

    def test_standing_still_gets_no_reward(self):
        s = _state(x=-8.0, z=-8.0)
        _, _, r, done, _, _ = step(s, np.zeros(ACT_DIM) - np.array([0, 0, 0, 1, 1]), CFG)
        assert r == 0.0 and not done

    def test_non_finite_action(self):
        with pytest.raises(ValueError):
            step(_state(), np.array([np.nan, 0, 0, 0, 0]), CFG)

    def test_action_clipping(self):
        a, *_ = step(_state(), np.array([5.0, 0, 0, -1, -1]), CFG)
        b, *_ = step(_state(), np.array([1.0, 0, 0, -1, -1]), CFG)
        assert a == b

    def test_straight_walk_shaping_telescopes(self):
        s, _ = reset(CFG, 3)
        d0 = math.hypot(s.x - s.goal_x, s.z - s.goal_z)
        total = 0.0
        for _ in range(CFG.max_steps):
            s, _, r, done, trunc, _ = step(s, _toward_goal(s), CFG)
            total += r
            if done or trunc:
                break
        assert done
        dT = math.hypot(s.x - s.goal_x, s.z - s.goal_z)
        assert total - 1.0 == pytest.approx(CFG.shaping_scale * (d0 - dT), abs=1e-12)
        assert CFG.shaping_scale * (d0 - dT) == pytest.approx(CFG.shaping_scale * (d0 - CFG.goal_radius),
                                                              abs=CFG.shaping_scale * CFG.max_speed)

    def test_truncation_at_max_steps(self):
        cfg = ArenaConfig(max_steps=5)
        s = _state(x=-9.0, z=-9.0)
        for i in range(5):
            s, _, _, done, trunc, _ = step(s, STILL, cfg)
        assert trunc and not done

    def test_energy_drain_and_recharge(self):
        s = _state(x=-9.0, z=-9.0)
        for n in range(1, 40):
            s, *_ = step(s, np.array([0.3, 0, 0, -1, -1]), CFG)
            assert s.energy == pytest.approx(max(0.0, 1 - n * CFG.energy_drain))
        prev = s.energy
        for _ in range(10):
            s, *_ = step(s, np.array([1.0, 1.0, 0, -1, 1.0]), CFG)
            assert s.energy >= prev
            prev = s.energy

    def test_recharge_immobilizes(self):
        s = _state(x=1.0, z=2.0)
        s2, *_ = step(s, np.array([1.0, 1.0, 0.5, -1, 0.5]), CFG)
        assert (s2.x, s2.z) == (1.0, 2.0)

    def test_jump_cycle(self):
        s = _state(x=-9.0, z=-9.0)
        flags = []
        for _ in range(7):
            s, *_, ev = step(s, np.array([0, 0, 0, 1.0, -1]), CFG)
            flags.append(ev[1])
        # four airborne ticks, a landing tick, then airborne again
        assert flags == [1, 1, 1, 1, 0, 1, 1]


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10_000),
       actions=st.lists(st.lists(st.floats(-2, 2), min_size=ACT_DIM, max_size=ACT_DIM), min_size=1, max_size=30))
def test_step_is_pure_and_consistent(seed, actions):
    cfg = ArenaConfig(lava_rects=((-2.0, -6.0, 2.0, 6.0),))
    s, obs = reset(cfg, seed)
    for a in actions:
        a = np.array(a)
        r1 = step(s, a, cfg)
        r2 = step(s, a, cfg)
        assert r1[0] == r2[0]
        assert np.array_equal(r1[5], events(r1[0], a, cfg))
        s2, obs2 = r1[0], r1[1]
        assert obs2.shape == (OBS_DIM,) and np.all(np.isfinite(obs2))
        assert abs(s2.x) <= cfg.half_extent and abs(s2.z) <= cfg.half_extent
        assert 0.0 <= s2.energy <= 1.0 and 0 <= s2.airborne_remaining <= cfg.jump_duration
        s = s2
        if r1[3] or r1[4]:
            break


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 40))
def test_shaping_telescopes_random_walk(seed, n):
    rng = np.random.default_rng(seed)
    s, _ = reset(CFG, rng)
    d0 = math.hypot(s.x - s.goal_x, s.z - s.goal_z)
    total = 0.0
    for _ in range(n):
        s, _, r, done, trunc, _ = step(s, rng.uniform(-1, 1, ACT_DIM), CFG)
        total += r - (1.0 if done else 0.0)
        if done or trunc:
            break
    dT = math.hypot(s.x - s.goal_x, s.z - s.goal_z)
    assert total == pytest.approx(CFG.shaping_scale * (d0 - dT), abs=1e-9)


def test_observation_layout():
    cfg = ArenaConfig(lava_rects=((1.5, -0.5, 2.5, 0.5),))
    s = _state(x=0.0, z=0.0, heading=0.0)
    obs = observe(s, cfg)
    assert obs.shape == (OBS_DIM,)
    assert obs[9] == 1.0                          # on ground
    assert obs[14] == 1.0 or obs[14] == 0.0
    probe = obs[18:43].reshape(5, 5)
    # probe row 0 is two metres ahead, column 2 is straight ahead
    assert probe[0, 2] == 1.0 and probe.sum() == 1.0
    assert obs[48] == 1.0


def test_arena_wrapper_runs():
    env = arena.Arena(CFG, np.random.default_rng(0))
    obs = env.reset()
    obs2, r, done, trunc, ev = env.step(np.zeros(ACT_DIM))
    assert obs.shape == obs2.shape == (OBS_DIM,) and ev.shape == (6,)
