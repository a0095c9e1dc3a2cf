"""Closed-loop episode runner shared by data collection, training and evaluation."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from . import plant as P
from .pid import PidController, PidGains
from .residual import act
from .td3 import Transition


def derive_seed(master: int, *keys: int) -> int:
    """Deterministic child seed: SeedSequence(master) spawned along ``keys``."""
    ss = np.random.SeedSequence(entropy=int(master), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


class Gate(Protocol):
    def reset(self) -> None: ...
    def observe(self, obs: np.ndarray, t: int) -> int: ...
    def active(self, hidden: int) -> bool: ...


@dataclass
class EpisodeLog:
    episode: int
    seed: int
    t_on: int
    t_off: int
    y: np.ndarray          # (T, m_y) observed before acting at each step
    obs: np.ndarray        # (T, obs_size)
    u: np.ndarray
    a_expert: np.ndarray
    a_agent: np.ndarray
    reward: np.ndarray     # reward of the state reached after acting
    disturbance: np.ndarray
    hidden: np.ndarray
    gate_on: np.ndarray
    shutdown: bool
    ret: float             # return after the initialisation window, shutdown penalty included
    n_steps: int

    def rows(self):
        for t in range(len(self.u)):
            yield (self.episode, t, *self.y[t], self.u[t], self.a_expert[t], self.a_agent[t],
                   self.reward[t], int(self.disturbance[t]), int(self.hidden[t]))

    def iohmm_sequence(self):
        """(U, Y) pairs aligned with the observation tuple: U_t = a^E_{t-1}, Y_t = y_t, t >= 1."""
        return self.a_expert[:-1, None].copy(), self.y[1:].copy()


def csv_header(m_y: int) -> list[str]:
    return ["episode", "t", *[f"y{i}" for i in range(m_y)], "u", "a_expert", "a_agent",
            "reward", "disturbance", "hidden_state"]


def discounted_penalty(worst: float, remaining: int, gamma: float) -> float:
    if remaining <= 0:
        return 0.0
    if gamma == 1.0:
        return worst * remaining
    return worst * gamma * (1.0 - gamma**remaining) / (1.0 - gamma)


def run_episode(plant_cfg: P.PlantConfig, disturbance: P.DisturbanceProfile, gains: PidGains,
                seed: int, mode: str = "pid_only", nets=None, gate: Gate | None = None,
                training: bool = False, noise_sd: float = 0.0, rng: np.random.Generator | None = None,
                on_transition: Callable[[Transition, bool], None] | None = None,
                init_fraction: float = 0.1, gamma: float = 0.99, episode: int = 0) -> EpisodeLog:
    """Run one episode.

    ``on_transition(tr, gate_on)`` receives every transition once the next
    expert action is known (so ``a_expert_next`` is filled). On shutdown the
    terminal transition's reward carries the discounted worst-case reward of
    the steps that were cut off.
    """
    state = P.reset(plant_cfg, disturbance, seed)
    var = disturbance.target_var
    pid = PidController(gains, plant_cfg.dt, float(plant_cfg.setpoint[var]), var)
    if gate is not None:
        gate.reset()
    n = plant_cfg.n_steps
    init_steps = int(round(init_fraction * n))
    worst = P.worst_reward(plant_cfg)
    cols = {k: [] for k in ("y", "obs", "u", "a_expert", "a_agent", "reward", "dist", "hidden", "gate")}
    pending = None
    ret = 0.0
    t = 0
    while not P.done(state):
        obs = P.build_observation(state)
        y_now = state.y.copy()
        a_e = pid(y_now)
        if pending is not None and on_transition is not None:
            tr, g = pending
            tr.a_expert_next = a_e
            on_transition(tr, g)
        hidden = gate.observe(obs, t) if gate is not None else -1
        gate_on = gate.active(hidden) if gate is not None else True
        dec = act(obs, a_e, nets, gate_on, mode, training, rng, noise_sd, plant_cfg.u_bounds)
        res = P.step(state, dec.a_applied, a_e)
        r = res.reward
        if t >= init_steps:
            ret += r
        for k, v in (("y", y_now), ("obs", obs), ("u", dec.a_applied), ("a_expert", a_e),
                     ("a_agent", dec.a_agent), ("reward", r), ("dist", res.info["disturbance"]),
                     ("hidden", hidden), ("gate", gate_on)):
            cols[k].append(v)
        r_store = r
        if res.shutdown:
            remaining = n - state.t
            ret += worst * (n - max(state.t, init_steps))
            r_store = r + discounted_penalty(worst, remaining, gamma)
        pending = (Transition(obs, dec.a_agent, a_e, r_store, res.observation, res.shutdown,
                              0.0, hidden), gate_on)
        t += 1
    if pending is not None and on_transition is not None:
        tr, g = pending
        if not tr.done:
            tr.a_expert_next = pid.peek(state.y)
        on_transition(tr, g)
    return EpisodeLog(
        episode, seed, state.t_on, state.t_off, np.array(cols["y"]), np.array(cols["obs"]),
        np.array(cols["u"]), np.array(cols["a_expert"]), np.array(cols["a_agent"]),
        np.array(cols["reward"]), np.array(cols["dist"], dtype=bool), np.array(cols["hidden"], dtype=int),
        np.array(cols["gate"], dtype=bool), state.shut_down, float(ret), t)
