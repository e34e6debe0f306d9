"""Bouncer: a 1.5D hopping cart with exact dynamics.

The agent slides along x under a thrust command and can fire a vertical
impulse while grounded. Three behavioral attributes (speed, hop height,
hop frequency) are computed in closed form from a state trajectory; they
stand in for human judgment when synthesizing feedback labels and serve
as the ground-truth reference during evaluation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class EnvError(ValueError):
    pass


@dataclass(frozen=True)
class BouncerConfig:
    dt: float = 0.05
    gravity: float = 9.8
    thrust_gain: float = 4.0
    impulse_gain: float = 6.0
    vx_limit: float = 3.0
    jump_threshold: float = 0.05
    # per-attribute (min, max) normalization bounds
    speed_bounds: tuple[float, float] = (-3.0, 3.0)
    hop_height_bounds: tuple[float, float] = (0.0, 1.8)
    hop_freq_bounds: tuple[float, float] = (0.0, 0.5)

    def to_dict(self) -> dict:
        return {
            "dt": self.dt, "gravity": self.gravity, "thrust_gain": self.thrust_gain,
            "impulse_gain": self.impulse_gain, "vx_limit": self.vx_limit,
            "jump_threshold": self.jump_threshold,
            "speed_bounds": list(self.speed_bounds),
            "hop_height_bounds": list(self.hop_height_bounds),
            "hop_freq_bounds": list(self.hop_freq_bounds),
        }


ATTRIBUTE_NAMES = ("speed", "hop_height", "hop_frequency")
STATE_DIM = 5   # x, y, vx, vy, grounded
ACTION_DIM = 2  # thrust, jump


@dataclass(frozen=True)
class State:
    x: float
    y: float
    vx: float
    vy: float
    grounded: bool

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.vx, self.vy, float(self.grounded)], dtype=np.float32)


@dataclass(frozen=True)
class Action:
    """Thrust in [-1, 1], jump in [0, 1]; values are clipped on construction."""
    thrust: float
    jump: float

    def __post_init__(self):
        if not (math.isfinite(self.thrust) and math.isfinite(self.jump)):
            raise EnvError(f"non-finite action ({self.thrust}, {self.jump})")
        object.__setattr__(self, "thrust", min(1.0, max(-1.0, self.thrust)))
        object.__setattr__(self, "jump", min(1.0, max(0.0, self.jump)))


INITIAL_STATE = State(x=0.0, y=0.0, vx=0.0, vy=0.0, grounded=True)


def step(s: State, a: Action, cfg: BouncerConfig = BouncerConfig()) -> State:
    """Semi-implicit Euler update; pure and deterministic."""
    if not all(math.isfinite(v) for v in (s.x, s.y, s.vx, s.vy)):
        raise EnvError(f"non-finite state {s}")
    vx = s.vx + cfg.thrust_gain * a.thrust * cfg.dt
    vx = min(cfg.vx_limit, max(-cfg.vx_limit, vx))
    vy = s.vy - cfg.gravity * cfg.dt
    if s.grounded and a.jump > cfg.jump_threshold:
        vy = cfg.impulse_gain * a.jump
    y = max(0.0, s.y + vy * cfg.dt)
    if y == 0.0:
        vy = 0.0
        grounded = True
    else:
        grounded = False
    x = s.x + vx * cfg.dt
    return State(x=x, y=y, vx=vx, vy=vy, grounded=grounded)


def sample_initial_state(rng: np.random.Generator) -> State:
    """Mixed grounded/airborne starts so datasets cover landing transients."""
    vx = float(rng.uniform(-3.0, 3.0))
    if rng.random() < 0.5:
        return State(x=0.0, y=0.0, vx=vx, vy=0.0, grounded=True)
    y = float(rng.uniform(0.1, 1.5))
    vy = float(rng.uniform(-3.0, 3.0))
    return State(x=0.0, y=y, vx=vx, vy=vy, grounded=False)


def _traj_array(traj) -> np.ndarray:
    if isinstance(traj, np.ndarray):
        arr = np.asarray(traj, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] < STATE_DIM:
            raise EnvError(f"trajectory array must be (L, {STATE_DIM}), got {arr.shape}")
        return arr
    return np.array([s.as_array() for s in traj], dtype=np.float64)


def _norm(value: float, bounds: tuple[float, float]) -> float:
    lo, hi = bounds
    return float(np.clip((value - lo) / (hi - lo), 0.0, 1.0))


def ground_truth_attributes(traj, cfg: BouncerConfig = BouncerConfig()) -> np.ndarray:
    """Evaluate (speed, hop_height, hop_frequency) in [0,1]^3 for a trajectory.

    speed: mean horizontal velocity. hop_height: mean over apexes of y,
    where y[i] is an apex iff y[i] > y[i-1] and y[i] >= y[i+1]; no apex
    means 0. hop_frequency: landing events (airborne -> grounded) per step.
    """
    arr = _traj_array(traj)
    if len(arr) < 2:
        raise EnvError(f"trajectory must have >= 2 states, got {len(arr)}")
    y = arr[:, 1]
    vx = arr[:, 2]
    grounded = arr[:, 4] > 0.5

    speed = _norm(float(vx.mean()), cfg.speed_bounds)

    apex = (y[1:-1] > y[:-2]) & (y[1:-1] >= y[2:])
    hop_height = _norm(float(y[1:-1][apex].mean()), cfg.hop_height_bounds) if apex.any() else 0.0

    landings = grounded[1:] & ~grounded[:-1]
    hop_freq = _norm(float(landings.sum()) / (len(arr) - 1), cfg.hop_freq_bounds)

    return np.array([speed, hop_height, hop_freq], dtype=np.float32)


@dataclass(frozen=True)
class AttributeSchema:
    """Named attributes plus their ground-truth evaluators and bounds."""
    names: tuple[str, ...]
    bounds: tuple[tuple[float, float], ...]
    env_config: BouncerConfig = field(default_factory=BouncerConfig)

    def __post_init__(self):
        if len(self.names) < 1:
            raise EnvError("schema needs at least one attribute")
        if len(set(self.names)) != len(self.names):
            raise EnvError(f"duplicate attribute names: {self.names}")
        for name, (lo, hi) in zip(self.names, self.bounds):
            if not hi > lo:
                raise EnvError(f"attribute {name!r} has degenerate bounds ({lo}, {hi})")

    @property
    def k(self) -> int:
        return len(self.names)

    def evaluate(self, traj) -> np.ndarray:
        return ground_truth_attributes(traj, self.env_config)


def default_schema(cfg: BouncerConfig = BouncerConfig()) -> AttributeSchema:
    return AttributeSchema(
        names=ATTRIBUTE_NAMES,
        bounds=(cfg.speed_bounds, cfg.hop_height_bounds, cfg.hop_freq_bounds),
        env_config=cfg,
    )


def scripted_controller(target_vx: float, jump: float):
    """Proportional velocity controller that fires a fixed-size jump when grounded."""

    def policy(s: State) -> Action:
        thrust = min(1.0, max(-1.0, 0.8 * (target_vx - s.vx)))
        return Action(thrust=thrust, jump=jump if s.grounded else 0.0)

    return policy


def rollout(policy, steps: int, s0: State = INITIAL_STATE,
            cfg: BouncerConfig = BouncerConfig()) -> tuple[np.ndarray, np.ndarray]:
    """Run a policy; returns (states (T,5), actions (T,2)) with a_t taken at s_t."""
    states = np.empty((steps, STATE_DIM), dtype=np.float32)
    actions = np.empty((steps, ACTION_DIM), dtype=np.float32)
    s = s0
    for t in range(steps):
        a = policy(s)
        states[t] = s.as_array()
        actions[t] = (a.thrust, a.jump)
        s = step(s, a, cfg)
    return states, actions
