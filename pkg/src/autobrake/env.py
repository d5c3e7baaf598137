"""Longitudinal driving simulator for the two braking scenarios.

Scenario 1 (static obstacle): the agent drives along +x from the origin toward
a stationary object 60 m ahead.

Scenario 2 (intersection): the lanes cross at the origin. The agent starts
45 m south and drives north (+y); the other car starts 45 m west, drives east
(+x) at constant speed and never yields.

Vehicle speeds are scalars along each vehicle's lane. Time is tracked as an
integer step count so it stays an exact multiple of ``dt``.
"""
import enum
import math
from dataclasses import dataclass, fields, replace
from typing import NamedTuple, Optional, Tuple

import numpy as np

from ._validation import check_positive, check_range
from .exceptions import ConfigurationError, ParseError, UsageError

N_FEATURES = 4


class Scenario(enum.IntEnum):
    STATIC_OBSTACLE = 1
    INTERSECTION = 2


class EpisodeOutcome(enum.Enum):
    RUNNING = "running"
    COLLISION = "collision"
    EARLY_STOP = "early_stop"
    HIGH_SPEED = "high_speed_at_intersection"
    TIME_LIMIT = "time_limit"


@dataclass(frozen=True)
class ScenarioConfig:
    scenario_id: Scenario = Scenario.STATIC_OBSTACLE
    dt: float = 0.1
    safety_distance: float = 5.0
    agent_start: Tuple[float, float] = (0.0, 0.0)
    agent_heading: Tuple[float, float] = (1.0, 0.0)
    object_start: Tuple[float, float] = (60.0, 0.0)
    object_heading: Tuple[float, float] = (1.0, 0.0)
    v_agent_range: Tuple[float, float] = (8.33, 27.77)
    v_object_range: Tuple[float, float] = (0.0, 0.0)
    episode_cap: float = 20.0
    max_accel: float = 3.0
    max_decel: float = 8.0
    early_stop_distance: float = 15.0
    stop_speed: float = 0.1
    intersection_speed_limit: float = 14.0
    intersection_box: float = 5.0
    history_depth: int = 10

    def __post_init__(self):
        object.__setattr__(self, "scenario_id", Scenario(self.scenario_id))
        for name in ("dt", "safety_distance", "episode_cap", "max_accel", "max_decel",
                     "early_stop_distance", "intersection_box"):
            check_positive(getattr(self, name), name)
        check_positive(self.history_depth, "history_depth", integer=True)
        if self.history_depth != 10:
            raise ConfigurationError("history_depth must be 10 to feed the 40-input networks")
        object.__setattr__(self, "v_agent_range", check_range(self.v_agent_range, "v_agent_range"))
        object.__setattr__(self, "v_object_range",
                           check_range(self.v_object_range, "v_object_range", allow_zero=True))
        for name in ("agent_start", "agent_heading", "object_start", "object_heading"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))

    @classmethod
    def static_obstacle(cls, **overrides):
        return cls(**overrides)

    @classmethod
    def intersection(cls, **overrides):
        params = dict(
            scenario_id=Scenario.INTERSECTION,
            agent_start=(0.0, -45.0), agent_heading=(0.0, 1.0),
            object_start=(-45.0, 0.0), object_heading=(1.0, 0.0),
            v_object_range=(8.33, 27.77), episode_cap=7.5,
        )
        params.update(overrides)
        return cls(**params)

    @classmethod
    def for_scenario(cls, scenario, **overrides):
        if Scenario(scenario) is Scenario.INTERSECTION:
            return cls.intersection(**overrides)
        return cls.static_obstacle(**overrides)

    @property
    def cap_steps(self):
        return int(round(self.episode_cap / self.dt))

    @property
    def state_size(self):
        return N_FEATURES * self.history_depth


@dataclass(frozen=True)
class RewardWeights:
    alpha: float = 0.01
    beta: float = 0.1
    eta: float = 0.01
    lam: float = 50.0
    gamma_stop: float = 15.0
    mu: float = 30.0
    delta: float = 0.5

    def __post_init__(self):
        for f in fields(self):
            check_positive(getattr(self, f.name), f.name)
        if not (self.lam > self.gamma_stop and self.lam > self.mu):
            raise ConfigurationError(
                "collision weight lam must exceed gamma_stop and mu "
                f"(lam={self.lam}, gamma_stop={self.gamma_stop}, mu={self.mu})")

    @classmethod
    def for_scenario(cls, scenario, **overrides):
        params = {"gamma_stop": 20.0 if Scenario(scenario) is Scenario.INTERSECTION else 15.0}
        params.update(overrides)
        return cls(**params)


@dataclass(frozen=True)
class WorldState:
    agent_pos: Tuple[float, float]
    agent_vel: float
    object_pos: Tuple[float, float]
    object_vel: float
    steps: int = 0
    time: float = 0.0
    done: Optional[EpisodeOutcome] = None


class ControlAction(NamedTuple):
    raw: float

    @property
    def throttle(self):
        return max(self.raw, 0.0)

    @property
    def brake(self):
        return max(-self.raw, 0.0)

    @classmethod
    def from_raw(cls, raw):
        return cls(float(min(max(raw, -1.0), 1.0)))


class StepResult(NamedTuple):
    next_state: np.ndarray
    reward: float
    outcome: EpisodeOutcome
    world: WorldState
    done: bool
    # False when the episode merely ran out of time, so bootstrapping stays on.
    terminal: bool


def observe(state, config):
    """Relative position and per-axis relative velocity (object minus agent)."""
    ah, oh = config.agent_heading, config.object_heading
    return np.array([
        state.object_pos[0] - state.agent_pos[0],
        state.object_pos[1] - state.agent_pos[1],
        oh[0] * state.object_vel - ah[0] * state.agent_vel,
        oh[1] * state.object_vel - ah[1] * state.agent_vel,
    ])


def push_history(history, observation):
    """Drop the oldest observation and append the newest (oldest first)."""
    return np.concatenate([history[N_FEATURES:], observation])


def reset(config, rng):
    """Spawn both vehicles; the agent's speed is drawn first, then the object's."""
    v_agent = float(rng.uniform(*config.v_agent_range))
    v_object = float(rng.uniform(*config.v_object_range))
    state = WorldState(config.agent_start, v_agent, config.object_start, v_object)
    history = np.tile(observe(state, config), config.history_depth)
    return state, history


def kinematics_step(state, action, config):
    if not isinstance(action, ControlAction):
        action = ControlAction.from_raw(action)
    accel = action.throttle * config.max_accel - action.brake * config.max_decel
    v = max(0.0, state.agent_vel + accel * config.dt)
    ax, ay = config.agent_heading
    ox, oy = config.object_heading
    step_len, obj_len = v * config.dt, state.object_vel * config.dt
    steps = state.steps + 1
    return WorldState(
        (state.agent_pos[0] + ax * step_len, state.agent_pos[1] + ay * step_len),
        v,
        (state.object_pos[0] + ox * obj_len, state.object_pos[1] + oy * obj_len),
        state.object_vel,
        steps,
        steps * config.dt,
    )


def compute_distance_sq(state):
    dx = state.object_pos[0] - state.agent_pos[0]
    dy = state.object_pos[1] - state.agent_pos[1]
    return dx * dx + dy * dy


def _in_box(pos, half):
    return abs(pos[0]) <= half and abs(pos[1]) <= half


def classify_outcome(state, config):
    """Outcome of the current state, checked in priority order."""
    distance = math.sqrt(compute_distance_sq(state))
    half = config.intersection_box / 2.0
    intersection = config.scenario_id is Scenario.INTERSECTION
    if intersection:
        agent_in_box = _in_box(state.agent_pos, half)
        if agent_in_box and _in_box(state.object_pos, half):
            return EpisodeOutcome.COLLISION
    elif distance < config.safety_distance:
        return EpisodeOutcome.COLLISION
    if state.agent_vel <= config.stop_speed and distance > config.early_stop_distance:
        return EpisodeOutcome.EARLY_STOP
    if intersection and agent_in_box and state.agent_vel > config.intersection_speed_limit:
        return EpisodeOutcome.HIGH_SPEED
    if state.steps >= config.cap_steps:
        return EpisodeOutcome.TIME_LIMIT
    return EpisodeOutcome.RUNNING


def reward_scenario1(outcome, state, action, weights):
    w = weights
    if outcome is EpisodeOutcome.COLLISION:
        d2 = compute_distance_sq(state)
        return -(w.alpha * d2 + w.beta) * abs(action) - (w.eta * state.agent_vel ** 2 + w.lam)
    if outcome is EpisodeOutcome.EARLY_STOP:
        return -(w.alpha * compute_distance_sq(state) + w.gamma_stop)
    return w.delta


def reward_scenario2(outcome, state, action, weights):
    w = weights
    if outcome is EpisodeOutcome.COLLISION:
        d2 = compute_distance_sq(state)
        dv = state.agent_vel - state.object_vel
        return -(w.alpha * d2 + w.beta) * abs(action) - (w.eta * dv * dv + w.lam)
    if outcome is EpisodeOutcome.EARLY_STOP:
        return -(w.alpha * compute_distance_sq(state) + w.gamma_stop)
    if outcome is EpisodeOutcome.HIGH_SPEED:
        return -(w.alpha * state.agent_vel ** 2 + w.mu)
    return w.delta


_TERMINAL = {
    Scenario.STATIC_OBSTACLE: frozenset({EpisodeOutcome.COLLISION, EpisodeOutcome.EARLY_STOP,
                                         EpisodeOutcome.HIGH_SPEED}),
    # high speed is penalised every step but does not end the episode here
    Scenario.INTERSECTION: frozenset({EpisodeOutcome.COLLISION, EpisodeOutcome.EARLY_STOP}),
}


def step(state, history, action, config, weights, rng=None):
    """Advance one ``dt``. ``rng`` is accepted for interface symmetry; the dynamics are deterministic."""
    if state.done is not None:
        raise UsageError(f"episode already ended with {state.done.value}")
    action = ControlAction.from_raw(action)
    nxt = kinematics_step(state, action, config)
    history = push_history(history, observe(nxt, config))
    outcome = classify_outcome(nxt, config)
    if config.scenario_id is Scenario.INTERSECTION:
        reward = reward_scenario2(outcome, nxt, action.raw, weights)
    else:
        reward = reward_scenario1(outcome, nxt, action.raw, weights)
    terminal = outcome in _TERMINAL[config.scenario_id]
    done = terminal or nxt.steps >= config.cap_steps
    if done:
        nxt = replace(nxt, done=outcome if terminal else EpisodeOutcome.TIME_LIMIT)
    return StepResult(history, float(reward), outcome, nxt, done, terminal)


class BrakingEnv:
    """Stateful wrapper with a gym-like ``reset``/``step`` surface."""

    def __init__(self, config=None, weights=None):
        self.config = config if config is not None else ScenarioConfig()
        self.weights = (weights if weights is not None
                        else RewardWeights.for_scenario(self.config.scenario_id))
        self.world = None
        self.history = None

    def reset(self, rng):
        self.world, self.history = reset(self.config, rng)
        return self.history

    def step(self, action):
        if self.world is None:
            raise UsageError("call reset() before step()")
        result = step(self.world, self.history, action, self.config, self.weights)
        self.world, self.history = result.world, result.next_state
        return result


# -- key = value config files ----------------------------------------------

def parse_key_values(text):
    """Parse ``key = value`` lines; ``#`` starts a comment. Values stay strings."""
    out = {}
    offset = 0
    for line in text.splitlines(keepends=True):
        body = line.split("#", 1)[0].strip()
        if body:
            if "=" not in body:
                raise ParseError(f"expected 'key = value', got {body!r}", offset)
            key, value = (s.strip() for s in body.split("=", 1))
            if not key or not value:
                raise ParseError(f"empty key or value in {body!r}", offset)
            out[key] = value
        offset += len(line.encode())
    return out


def _coerce(value, default):
    if isinstance(default, tuple):
        parts = [p for p in value.replace("(", "").replace(")", "").split(",") if p.strip()]
        return tuple(float(p) for p in parts)
    if isinstance(default, enum.Enum):
        return type(default)(int(value))
    if isinstance(default, bool):
        return value.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(value)
    return float(value)


def apply_overrides(instance, values):
    """Return a copy of a config dataclass with matching string ``values`` coerced and applied.

    Keys that are not fields of ``instance`` are ignored; callers check for leftovers.
    """
    updates = {}
    for f in fields(instance):
        if f.name in values:
            try:
                updates[f.name] = _coerce(values[f.name], getattr(instance, f.name))
            except ValueError as exc:
                raise ConfigurationError(f"bad value for {f.name}: {values[f.name]!r}") from exc
    return replace(instance, **updates)
