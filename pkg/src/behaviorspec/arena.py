"""Desk-scale 2D navigation arena with behavioral indicator events.

The agent moves on the plane ``[-L, L]^2`` toward a randomly placed goal.
Its look direction (``heading``) is turned by a yaw-rate command; planar
velocity commands are given in the agent's own frame (forward, left) and
rotated into the world frame.  Besides the goal, the arena has a fixed look-at
marker, axis-aligned lava rectangles, a jump that keeps the agent airborne for
``jump_duration`` steps, and an energy bar drained every step and refilled
(while standing still) by the recharge action.

Events, in order::

    0 not_looking        marker outside the field-of-view cone
    1 not_on_ground      airborne
    2 in_lava            inside a lava rectangle while on the ground
    3 above_speed_limit  |velocity| > speed_limit
    4 under_energy       energy < energy_floor
    5 reached_goal       |position - goal| <= goal_radius

Observation layout (``obs_dim = 49``)::

    0:2    position / L
    2:4    heading (cos, sin)
    4:6    velocity in the agent frame / max_speed
    6:8    goal offset in the agent frame / 2L
    8      goal distance / (2 sqrt(2) L)
    9      on-ground flag
    10:12  marker offset in the agent frame / 2L, clipped to [-1, 1]
    12     marker distance / (2 sqrt(2) L), clipped to [0, 1]
    13     signed look angle to the marker / pi
    14     marker-in-fov flag
    15     energy
    16     recharging flag
    17     in-lava flag
    18:43  5x5 lava probe (1 m spacing, agent frame, row-major)
    43:48  per-episode running rate of the five behavior events
    48     remaining time fraction
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

BEHAVIORS = ("not_looking", "not_on_ground", "in_lava", "above_speed_limit", "under_energy")
SUCCESS = "reached_goal"
EVENT_NAMES = BEHAVIORS + (SUCCESS,)
ACT_DIM = 5
OBS_DIM = 49
SPAWN_RETRIES = 1000

_PROBE = np.array([(fx, lz) for fx in (2.0, 1.0, 0.0, -1.0, -2.0) for lz in (2.0, 1.0, 0.0, -1.0, -2.0)])


class SpawnError(RuntimeError):
    """No lava-free spawn position found within the retry budget."""


@dataclass(frozen=True)
class ArenaConfig:
    half_extent: float = 10.0
    max_steps: int = 300
    goal_radius: float = 1.0
    marker_position: tuple = (0.0, 0.0)
    fov_half_angle: float = math.pi / 6
    max_speed: float = 0.5
    max_yaw: float = math.pi / 3
    speed_limit: float = 0.5
    energy_drain: float = 0.005
    energy_recharge: float = 0.05
    energy_floor: float = 0.1
    jump_duration: int = 4
    lava_rects: tuple = ()
    shaping_scale: float = 0.1
    seed: int = 0

    def __post_init__(self):
        L = self.half_extent
        if not L > 0:
            raise ValueError("half_extent must be positive")
        if not 0 < self.goal_radius < L:
            raise ValueError("goal_radius must lie in (0, half_extent)")
        if not 0 < self.fov_half_angle < math.pi:
            raise ValueError("fov_half_angle must lie in (0, pi)")
        for name in ("energy_drain", "energy_recharge"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ValueError(f"{name} must lie in (0, 1]")
        if not 0 <= self.energy_floor <= 1:
            raise ValueError("energy_floor must lie in [0, 1]")
        if self.max_steps < 1 or self.jump_duration < 1:
            raise ValueError("max_steps and jump_duration must be positive")
        rects = tuple(tuple(float(v) for v in r) for r in self.lava_rects)
        for x0, z0, x1, z1 in rects:
            if not (-L <= x0 < x1 <= L and -L <= z0 < z1 <= L):
                raise ValueError(f"lava rectangle {(x0, z0, x1, z1)} is not inside the arena")
        object.__setattr__(self, "lava_rects", rects)
        object.__setattr__(self, "marker_position", tuple(float(v) for v in self.marker_position))


@dataclass
class ArenaState:
    x: float
    z: float
    heading: float
    vx: float
    vz: float
    energy: float
    airborne_remaining: int
    goal_x: float
    goal_z: float
    step_index: int = 0
    recharging: bool = False
    event_counts: tuple = field(default=(0,) * len(BEHAVIORS))

    @property
    def position(self):
        return np.array([self.x, self.z])

    @property
    def goal(self):
        return np.array([self.goal_x, self.goal_z])

    @property
    def on_ground(self):
        return self.airborne_remaining == 0


def invert_indicator(flag):
    """Logical negation of an indicator, used to bound a desired behavior."""
    return 1 - int(flag)


def _in_lava_xy(x, z, rects):
    for x0, z0, x1, z1 in rects:
        if x0 < x < x1 and z0 < z < z1:
            return True
    return False


def _wrap(angle):
    return (angle + math.pi) % (2.0 * math.pi) - math.pi


def _look_angle(state: ArenaState, config: ArenaConfig):
    mx, mz = config.marker_position
    dx, dz = mx - state.x, mz - state.z
    if dx == 0.0 and dz == 0.0:
        return 0.0
    return _wrap(math.atan2(dz, dx) - state.heading)


def events(state: ArenaState, action, config: ArenaConfig) -> np.ndarray:
    """Indicator vector for a post-step state (``action`` kept for the signature of C(s, a))."""
    not_looking = abs(_look_angle(state, config)) > config.fov_half_angle
    airborne = state.airborne_remaining > 0
    lava = (not airborne) and _in_lava_xy(state.x, state.z, config.lava_rects)
    speed = math.hypot(state.vx, state.vz) > config.speed_limit
    low_energy = state.energy < config.energy_floor
    reached = math.hypot(state.x - state.goal_x, state.z - state.goal_z) <= config.goal_radius
    return np.array([not_looking, airborne, lava, speed, low_energy, reached], dtype=np.float64)


def _spawn_point(rng, config):
    L = config.half_extent
    for _ in range(SPAWN_RETRIES):
        x, z = rng.uniform(-L, L, size=2)
        if not _in_lava_xy(x, z, config.lava_rects):
            return float(x), float(z)
    raise SpawnError("could not find a lava-free spawn position")


def reset(config: ArenaConfig, seed):
    """Fresh episode.  ``seed`` is an int or a ``numpy.random.Generator``."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    x, z = _spawn_point(rng, config)
    for _ in range(SPAWN_RETRIES):
        gx, gz = _spawn_point(rng, config)
        if math.hypot(gx - x, gz - z) >= 2.0 * config.goal_radius:
            break
    else:
        raise SpawnError("could not place the goal away from the agent")
    heading = float(rng.uniform(-math.pi, math.pi))
    state = ArenaState(x=x, z=z, heading=heading, vx=0.0, vz=0.0, energy=1.0,
                       airborne_remaining=0, goal_x=gx, goal_z=gz)
    return state, observe(state, config)


def step(state: ArenaState, action, config: ArenaConfig):
    """Advance one tick.

    Returns ``(state, obs, reward, done, truncated, events)``.
    """
    a = np.asarray(action, dtype=np.float64)
    if a.shape != (ACT_DIM,):
        raise ValueError(f"action must have {ACT_DIM} components")
    if not np.all(np.isfinite(a)):
        raise ValueError("non-finite action")
    a = np.clip(a, -1.0, 1.0)
    fwd, left, yaw, jump, recharge = (float(v) for v in a)
    recharging = recharge > 0.0

    heading = _wrap(state.heading + yaw * config.max_yaw)
    if recharging:
        wx = wz = 0.0
        energy = min(1.0, state.energy + config.energy_recharge)
    else:
        c, s = math.cos(heading), math.sin(heading)
        wx = config.max_speed * (fwd * c - left * s)
        wz = config.max_speed * (fwd * s + left * c)
        energy = max(0.0, state.energy - config.energy_drain)
    L = config.half_extent
    nx = min(L, max(-L, state.x + wx))
    nz = min(L, max(-L, state.z + wz))

    if state.airborne_remaining > 0:
        airborne = state.airborne_remaining - 1
    elif jump > 0.0:
        airborne = config.jump_duration
    else:
        airborne = 0

    nxt = ArenaState(x=nx, z=nz, heading=heading, vx=nx - state.x, vz=nz - state.z,
                     energy=energy, airborne_remaining=airborne, goal_x=state.goal_x,
                     goal_z=state.goal_z, step_index=state.step_index + 1,
                     recharging=recharging, event_counts=state.event_counts)
    ev = events(nxt, a, config)
    nxt.event_counts = tuple(c + int(e) for c, e in zip(state.event_counts, ev[:len(BEHAVIORS)]))

    d_prev = math.hypot(state.x - state.goal_x, state.z - state.goal_z)
    d_new = math.hypot(nx - state.goal_x, nz - state.goal_z)
    reached = bool(ev[-1])
    reward = config.shaping_scale * (d_prev - d_new) + (1.0 if reached else 0.0)
    truncated = (not reached) and nxt.step_index >= config.max_steps
    return nxt, observe(nxt, config), reward, reached, truncated, ev


def _to_local(dx, dz, heading):
    c, s = math.cos(heading), math.sin(heading)
    return dx * c + dz * s, -dx * s + dz * c


def observe(state: ArenaState, config: ArenaConfig) -> np.ndarray:
    L = config.half_extent
    diag = 2.0 * math.sqrt(2.0) * L
    h = state.heading
    c, s = math.cos(h), math.sin(h)
    lvx, lvz = _to_local(state.vx, state.vz, h)
    gdx, gdz = state.goal_x - state.x, state.goal_z - state.z
    glx, glz = _to_local(gdx, gdz, h)
    mx, mz = config.marker_position
    mdx, mdz = mx - state.x, mz - state.z
    mlx, mlz = _to_local(mdx, mdz, h)
    angle = _look_angle(state, config)
    on_ground = state.airborne_remaining == 0
    lava_here = on_ground and _in_lava_xy(state.x, state.z, config.lava_rects)
    n = max(state.step_index, 1)
    head = [
        state.x / L, state.z / L, c, s,
        lvx / config.max_speed, lvz / config.max_speed,
        glx / (2 * L), glz / (2 * L), math.hypot(gdx, gdz) / diag,
        float(on_ground),
        max(-1.0, min(1.0, mlx / (2 * L))), max(-1.0, min(1.0, mlz / (2 * L))),
        min(1.0, math.hypot(mdx, mdz) / diag),
        angle / math.pi, float(abs(angle) <= config.fov_half_angle),
        state.energy, float(state.recharging), float(lava_here),
    ]
    if config.lava_rects:
        px = state.x + _PROBE[:, 0] * c - _PROBE[:, 1] * s
        pz = state.z + _PROBE[:, 0] * s + _PROBE[:, 1] * c
        probe = np.zeros(len(_PROBE))
        for x0, z0, x1, z1 in config.lava_rects:
            probe[(px > x0) & (px < x1) & (pz > z0) & (pz < z1)] = 1.0
    else:
        probe = np.zeros(len(_PROBE))
    tail = [cnt / n for cnt in state.event_counts]
    tail.append(1.0 - state.step_index / config.max_steps)
    return np.concatenate([head, probe, tail])


class Arena:
    """Stateful convenience wrapper with a gym-like ``reset``/``step`` pair."""

    obs_dim = OBS_DIM
    act_dim = ACT_DIM

    def __init__(self, config: ArenaConfig, rng: np.random.Generator):
        self.config = config
        self.rng = rng
        self.state = None

    def reset(self):
        self.state, obs = reset(self.config, self.rng)
        return obs

    def step(self, action):
        self.state, obs, reward, done, truncated, ev = step(self.state, action, self.config)
        return obs, reward, done, truncated, ev


def with_lava(config: ArenaConfig, rects) -> ArenaConfig:
    return replace(config, lava_rects=tuple(rects))
