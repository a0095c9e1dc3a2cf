"""Surrogate continuous process plant.

First-order coupled linear dynamics driven by a single actuator, with a
multiplicative step disturbance ("feed loss") on one actuation path, bounds
that trigger an emergency shutdown, and the history-window observation used
by the learning agents.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np


class PlantError(ValueError):
    """Invalid plant configuration or illegal use of a plant instance."""


@dataclass
class PlantConfig:
    m_y: int = 1
    dt: float = 0.01
    episode_hours: float = 5.0
    tau: np.ndarray = field(default_factory=lambda: np.array([0.04]))
    gain: np.ndarray = field(default_factory=lambda: np.array([3.4]))
    coupling: np.ndarray = field(default_factory=lambda: np.eye(1))
    setpoint: np.ndarray = field(default_factory=lambda: np.array([1.0]))
    noise_sd: float = 0.003
    y_low: np.ndarray = field(default_factory=lambda: np.array([0.3]))
    y_high: np.ndarray = field(default_factory=lambda: np.array([1.7]))
    u_bounds: tuple[float, float] = (0.0, 1.0)
    history: int = 1
    # direct response of each variable to the disturbance level (a sensor of the lost feed)
    disturbance_gain: np.ndarray | None = None

    def __post_init__(self):
        if self.disturbance_gain is None:
            self.disturbance_gain = np.zeros(self.m_y)
        for name in ("tau", "gain", "setpoint", "y_low", "y_high", "disturbance_gain"):
            setattr(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        self.coupling = np.atleast_2d(np.asarray(self.coupling, dtype=float))
        self.u_bounds = (float(self.u_bounds[0]), float(self.u_bounds[1]))

    @property
    def n_steps(self) -> int:
        return int(round(self.episode_hours / self.dt))

    @property
    def obs_size(self) -> int:
        return (self.history + 1) * (self.m_y + 1)

    def validate(self) -> None:
        if not self.dt > 0:
            raise PlantError(f"dt must be positive, got {self.dt}")
        steps = self.episode_hours / self.dt
        if steps < 1 or abs(steps - round(steps)) > 1e-9:
            raise PlantError(f"episode_hours / dt must be a positive integer, got {steps}")
        m = self.m_y
        for name in ("tau", "gain", "setpoint", "y_low", "y_high", "disturbance_gain"):
            if getattr(self, name).shape != (m,):
                raise PlantError(f"{name} must have length m_y={m}")
        if self.coupling.shape != (m, m):
            raise PlantError(f"coupling must be {m}x{m}")
        if np.any(self.tau <= 0):
            raise PlantError("tau must be positive elementwise")
        if not (np.all(self.y_low < self.setpoint) and np.all(self.setpoint < self.y_high)):
            raise PlantError("y_low < setpoint < y_high must hold elementwise")
        if not self.u_bounds[0] < self.u_bounds[1]:
            raise PlantError("u_bounds low must be below high")
        if self.history < 0:
            raise PlantError("history depth must be non-negative")
        if self.noise_sd < 0:
            raise PlantError("noise_sd must be non-negative")


def siso_config(**overrides) -> PlantConfig:
    return PlantConfig(**overrides)


def miso_config(**overrides) -> PlantConfig:
    """Eight variables: the controlled one, a feed-flow sensor and six downstream ones.

    Only variable 0 receives actuation. Variable 1 reads the lost feed
    fraction directly and no controller can move it. Variables 2..7 are
    pushed by variable 0's imbalance through the coupling column and relax
    back to zero at equilibrium, so they deviate while variable 0 is off
    balance.
    """
    m = 8
    coupling = np.eye(m)
    coupling[2:, 0] = np.linspace(0.6, 0.25, m - 2)
    gain = np.zeros(m)
    gain[0] = 3.4
    setpoint = np.zeros(m)
    setpoint[0] = 1.0
    dist_gain = np.zeros(m)
    dist_gain[1] = -1.0
    kw = dict(
        m_y=m,
        episode_hours=2.5,
        tau=np.concatenate([[0.04], np.linspace(0.05, 0.12, m - 1)]),
        gain=gain,
        coupling=coupling,
        setpoint=setpoint,
        y_low=np.concatenate([[0.3], -np.ones(m - 1)]),
        y_high=np.concatenate([[1.7], np.ones(m - 1)]),
        disturbance_gain=dist_gain,
    )
    kw.update(overrides)
    return PlantConfig(**kw)


@dataclass
class DisturbanceProfile:
    magnitude: float = 0.65
    t_on: int = 100
    t_off: int = 400
    target_var: int = 0
    # ((on_lo, on_hi), (off_lo, off_hi)); draws are inclusive-exclusive
    rng_window: tuple | None = None

    def validate(self, n_steps: int, m_y: int) -> None:
        if not 0.0 <= self.magnitude <= 1.0:
            raise PlantError(f"disturbance magnitude must lie in [0, 1], got {self.magnitude}")
        if not 0 <= self.target_var < m_y:
            raise PlantError(f"target_var {self.target_var} out of range for m_y={m_y}")
        if self.rng_window is None:
            if not (0 <= self.t_on < self.t_off <= n_steps):
                raise PlantError(f"need 0 <= t_on < t_off <= {n_steps}")
        else:
            (a, b), (c, d) = self.rng_window
            if not (0 <= a < b and c < d <= n_steps + 1 and b - 1 < c):
                raise PlantError(f"rng_window {self.rng_window} cannot give t_on < t_off <= {n_steps}")


@dataclass
class PlantState:
    config: PlantConfig
    disturbance: DisturbanceProfile
    y: np.ndarray
    t: int
    t_on: int
    t_off: int
    history: deque
    rng: np.random.Generator
    disturbance_active: bool = False
    shut_down: bool = False


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    shutdown: bool
    info: dict


def reward(y, y_sp) -> float:
    """Negative l1 set-point error."""
    y = np.asarray(y, dtype=float)
    y_sp = np.asarray(y_sp, dtype=float)
    if y.shape != y_sp.shape:
        raise PlantError(f"reward: shape mismatch {y.shape} vs {y_sp.shape}")
    return -float(np.sum(np.abs(y - y_sp)))


def worst_reward(config: PlantConfig) -> float:
    """Lowest reward attainable while every variable is still inside its bounds."""
    span = np.maximum(config.setpoint - config.y_low, config.y_high - config.setpoint)
    return -float(np.sum(span))


def reset(config: PlantConfig, disturbance: DisturbanceProfile, seed: int) -> PlantState:
    config.validate()
    n = config.n_steps
    disturbance.validate(n, config.m_y)
    rng = np.random.default_rng(seed)
    if disturbance.rng_window is None:
        t_on, t_off = disturbance.t_on, disturbance.t_off
    else:
        (a, b), (c, d) = disturbance.rng_window
        t_on = int(rng.integers(a, b))
        t_off = int(rng.integers(max(c, t_on + 1), d))
    y = config.setpoint.copy()
    history = deque(maxlen=config.history + 1)
    for _ in range(config.history):
        history.append((np.zeros(config.m_y), 0.0))
    history.append((y.copy(), 0.0))
    return PlantState(config, disturbance, y, 0, t_on, t_off, history, rng)


def build_observation(state: PlantState) -> np.ndarray:
    """Flattened ((y_{t-l}, aE_{t-l-1}), ..., (y_t, aE_{t-1})), oldest first."""
    return np.concatenate([np.append(y, a) for y, a in state.history])


def disturbance_level(state: PlantState, t: int | None = None) -> float:
    t = state.t if t is None else t
    return state.disturbance.magnitude if state.t_on <= t < state.t_off else 0.0


def step(state: PlantState, u: float, a_expert: float) -> StepResult:
    if state.shut_down:
        raise PlantError(f"step() called on a plant that shut down at t={state.t}")
    cfg = state.config
    u = float(u)
    lo, hi = cfg.u_bounds
    if not lo - 1e-12 <= u <= hi + 1e-12:
        raise PlantError(f"actuator value {u} outside u_bounds {cfg.u_bounds}")
    t = state.t
    d = disturbance_level(state, t)
    drive = cfg.gain * u
    drive[state.disturbance.target_var] *= 1.0 - d
    drive = drive + cfg.disturbance_gain * d
    y = state.y + (cfg.dt / cfg.tau) * (cfg.coupling @ (drive - state.y))
    if cfg.noise_sd > 0:
        y = y + cfg.noise_sd * state.rng.standard_normal(cfg.m_y)
    state.y = y
    state.t = t + 1
    state.disturbance_active = d > 0
    state.history.append((y.copy(), float(a_expert)))
    shutdown = bool(np.any(y < cfg.y_low) or np.any(y > cfg.y_high))
    state.shut_down = shutdown
    info = {"t": t, "y": y.copy(), "disturbance": d > 0}
    return StepResult(build_observation(state), reward(y, cfg.setpoint), shutdown, info)


def done(state: PlantState) -> bool:
    return state.shut_down or state.t >= state.config.n_steps


def shutdown_penalty(state: PlantState) -> float:
    """Summed worst in-bounds reward over the steps cut off by a shutdown."""
    remaining = state.config.n_steps - state.t
    return worst_reward(state.config) * remaining if state.shut_down else 0.0


def observation_scale(config: PlantConfig) -> tuple[np.ndarray, np.ndarray]:
    """Center and half-width of each observation entry (set point and safe band for y)."""
    lo, hi = config.u_bounds
    center = np.append(config.setpoint, 0.5 * (lo + hi))
    scale = np.append(0.5 * (config.y_high - config.y_low), 0.5 * (hi - lo))
    k = config.history + 1
    return np.tile(center, k), np.tile(scale, k)
