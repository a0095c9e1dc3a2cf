"""Positional PID expert controller with clamping anti-windup."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace


@dataclass(frozen=True)
class PidGains:
    kp: float = 0.5
    ki: float = 5.0
    kd: float = 0.0
    bias: float = 1.0 / 3.4
    output_bounds: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        lo, hi = self.output_bounds
        if not lo < hi:
            raise ValueError(f"output_bounds low must be below high, got {self.output_bounds}")


@dataclass
class PidState:
    dt: float = 0.01
    integral: float = 0.0
    prev_error: float = 0.0
    saturated: bool = False


def reset(state: PidState) -> PidState:
    state.integral = 0.0
    state.prev_error = 0.0
    state.saturated = False
    return state


def _evaluate(error: float, state: PidState, gains: PidGains) -> tuple[float, float, bool]:
    if not math.isfinite(error):
        raise ValueError(f"PID error input must be finite, got {error}")
    if not state.dt > 0:
        raise ValueError(f"PID dt must be positive, got {state.dt}")
    lo, hi = gains.output_bounds
    derivative = (error - state.prev_error) / state.dt
    integral = state.integral + error * state.dt
    raw = gains.bias + gains.kp * error + gains.ki * integral + gains.kd * derivative
    saturated = raw > hi or raw < lo
    if saturated and (raw > hi) == (gains.ki * error > 0):
        # clamping: freeze the integrator while it would drive further into saturation
        integral = state.integral
        raw = gains.bias + gains.kp * error + gains.ki * integral + gains.kd * derivative
    return min(max(raw, lo), hi), integral, saturated


def pid_step(error: float, state: PidState, gains: PidGains) -> float:
    u, state.integral, state.saturated = _evaluate(error, state, gains)
    state.prev_error = error
    return u


def peek(error: float, state: PidState, gains: PidGains) -> float:
    """Output pid_step would produce, leaving the state untouched."""
    return _evaluate(error, state, gains)[0]


def pid_step_no_windup_guard(error: float, state: PidState, gains: PidGains) -> float:
    """Plain clamped PID that keeps integrating under saturation (comparison baseline)."""
    lo, hi = gains.output_bounds
    derivative = (error - state.prev_error) / state.dt
    state.integral += error * state.dt
    state.prev_error = error
    raw = gains.bias + gains.kp * error + gains.ki * state.integral + gains.kd * derivative
    return min(max(raw, lo), hi)


class PidController:
    """Stateful wrapper tracking a single process variable."""

    def __init__(self, gains: PidGains, dt: float, setpoint: float, var: int = 0):
        self.gains = gains
        self.state = PidState(dt=dt)
        self.setpoint = setpoint
        self.var = var

    def reset(self) -> None:
        reset(self.state)

    def error(self, y) -> float:
        return float(self.setpoint - y[self.var])

    def __call__(self, y) -> float:
        return pid_step(self.error(y), self.state, self.gains)

    def peek(self, y) -> float:
        return peek(self.error(y), self.state, self.gains)

    def copy(self) -> "PidController":
        other = PidController(self.gains, self.state.dt, self.setpoint, self.var)
        other.state = replace(self.state)
        return other
