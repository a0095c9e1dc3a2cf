"""Runtime composition of the expert action and the agent's residual."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MODES = ("pid_only", "drl_only", "residual")


@dataclass(frozen=True)
class ControlDecision:
    a_expert: float
    a_agent: float
    a_applied: float
    gate_on: bool
    mode: str


def residual_map(sigmoid_out: float, r_scale: float = 0.5) -> float:
    if not 0.0 <= sigmoid_out <= 1.0:
        raise ValueError(f"sigmoid output must lie in [0, 1], got {sigmoid_out}")
    return (2.0 * sigmoid_out - 1.0) * r_scale


def superpose(a_expert: float, a_agent: float, u_bounds=(0.0, 1.0)) -> float:
    lo, hi = u_bounds
    return min(max(a_expert + a_agent, lo), hi)


def act(observation, a_expert: float, nets, gate_on: bool, mode: str, training: bool = False,
        rng: np.random.Generator | None = None, noise_sd: float = 0.0,
        u_bounds=(0.0, 1.0)) -> ControlDecision:
    """Pick the applied actuator value for one step.

    ``a_expert`` is the PID output for this step. ``nets`` supplies the actor
    (anything with ``policy`` and ``action_range``); it is not consulted in
    pid_only mode or when the gate is off. Outside the gate the expert acts
    alone in every mode.
    """
    if mode not in MODES:
        raise ValueError(f"unknown control mode {mode!r}")
    lo, hi = u_bounds
    if mode == "pid_only" or not gate_on:
        return ControlDecision(a_expert, 0.0, min(max(a_expert, lo), hi), gate_on, mode)
    a = float(nets.policy(observation)[0])
    if training and noise_sd > 0:
        a = float(np.clip(a + noise_sd * rng.standard_normal(), *nets.action_range))
    if mode == "drl_only":
        return ControlDecision(a_expert, a, min(max(a, lo), hi), gate_on, mode)
    return ControlDecision(a_expert, a, superpose(a_expert, a, u_bounds), gate_on, mode)
