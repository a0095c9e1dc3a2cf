"""State-value warmup, value-based hidden-state classification and the runtime gate."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from . import iohmm
from .net import Network, mlp
from .td3 import ReplayBuffer

log = logging.getLogger(__name__)


def value_net(obs_size: int, hidden=(64, 32), seed=0) -> Network:
    return mlp([obs_size, *hidden, 1], seed=seed)


def value_loss(v: Network, s, r, s_next, done, gamma: float) -> tuple[float, np.ndarray]:
    """1/2 mean ((r + gamma V(s')) - V(s))^2 with the bootstrap held fixed; fills v.grad."""
    boot = v.forward(s_next)[:, 0]
    target = r + gamma * (1.0 - done) * boot
    pred = v.forward(s)[:, 0]
    err = pred - target
    v.backward((err / len(r))[:, None])
    return float(0.5 * np.mean(err**2)), target


def train_value(b_e: ReplayBuffer, v: Network, steps: int, gamma: float = 0.99,
                lr: float = 1e-3, batch_size: int = 64, seed: int = 0) -> list[float]:
    if steps <= 0:
        return []
    if len(b_e) == 0:
        raise ValueError("value warmup needs a non-empty expert buffer")
    rng = np.random.default_rng(seed)
    n = min(batch_size, len(b_e))
    losses = []
    for _ in range(steps):
        b = b_e.sample(n, rng)
        loss, _ = value_loss(v, b.s, b.r, b.s_next, b.done, gamma)
        v.apply_update(None, lr)
        losses.append(loss)
    return losses


@dataclass
class StateStats:
    state: int
    mean: float
    sd: float
    ci_low: float
    ci_high: float
    count: int


@dataclass
class StateClassification:
    stats: list[StateStats]
    specialized: frozenset
    empty_states: list = field(default_factory=list)
    reference: float = 0.0

    def table(self) -> list[dict]:
        return [{"state": s.state, "mean": s.mean, "sd": s.sd, "ci_high": s.ci_high,
                 "ci_low": s.ci_low, "count": s.count} for s in self.stats]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["state", "mean", "sd", "ci_high", "ci_low", "count", "specialized"])
            for s in self.stats:
                w.writerow([s.state, f"{s.mean:.10g}", f"{s.sd:.10g}", f"{s.ci_high:.10g}",
                            f"{s.ci_low:.10g}", s.count, int(s.state in self.specialized)])


def select_abnormal(means: dict[int, float], reference: float = 0.0) -> frozenset:
    """States whose mean value lies below ``reference``; the argmin if none does."""
    if not means:
        raise ValueError("no hidden state has decoded samples")
    chosen = frozenset(k for k, m in means.items() if m - reference < 0)
    if not chosen:
        chosen = frozenset([min(means, key=lambda k: (means[k], k))])
    return chosen


def summarize(values_by_state: dict[int, np.ndarray], n_states: int, z: float = 1.96,
              reference: float | str = "pooled") -> StateClassification:
    """Per-state value statistics and the specialized set.

    ``reference`` is the zero point of the abnormality score: a number, or
    "pooled" for the mean value over every decoded step.
    """
    stats, empty = [], []
    for k in range(n_states):
        vals = np.asarray(values_by_state.get(k, []), dtype=float)
        if vals.size == 0:
            empty.append(k)
            continue
        sd = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
        half = z * sd / np.sqrt(vals.size)
        m = float(vals.mean())
        stats.append(StateStats(k, m, sd, m - half, m + half, int(vals.size)))
    if empty:
        log.warning("hidden states %s received no decoded samples and are excluded", empty)
    if reference == "pooled":
        allv = np.concatenate([np.asarray(v, dtype=float) for v in values_by_state.values() if len(v)])
        reference = float(allv.mean())
    chosen = select_abnormal({s.state: s.mean for s in stats}, float(reference))
    return StateClassification(stats, chosen, empty, float(reference))


def classify_states(v: Network, params: iohmm.IohmmParams, expert_episodes, smoothed: bool = True,
                    z: float = 1.96, reference: float | str = "pooled") -> StateClassification:
    """Decode every expert step and aggregate V(s_t) per hidden state."""
    by_state: dict[int, list] = {}
    for ep in expert_episodes:
        U, Y = ep.iohmm_sequence()
        states = iohmm.decode_all(params, U, Y, smoothed=smoothed)
        vals = v.forward(ep.obs[1:])[:, 0]
        for k in np.unique(states):
            by_state.setdefault(int(k), []).extend(vals[states == k])
    return summarize(by_state, params.n_states, z, reference)


def gate(x_t: int, classification: StateClassification) -> bool:
    return x_t in classification.specialized


class HiddenStateGate:
    """Online gate: filtered IOHMM decoding of (y_t, a^E_{t-1}) from the observation tail."""

    def __init__(self, params: iohmm.IohmmParams, specialized, m_y: int):
        self.filter = iohmm.IohmmFilter(params)
        self.specialized = frozenset(specialized)
        self.m_y = m_y

    def reset(self) -> None:
        self.filter.reset()

    def observe(self, obs: np.ndarray, t: int) -> int:
        if t == 0:
            return -1  # no expert action has been applied yet
        tail = obs[-(self.m_y + 1):]
        self.filter.update(tail[-1:], tail[:-1])
        return self.filter.state()

    def active(self, hidden: int) -> bool:
        return hidden in self.specialized
