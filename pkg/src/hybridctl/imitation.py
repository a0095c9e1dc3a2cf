"""Behavioral cloning, cycle-of-learning losses, batch mixing and pretraining."""
from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from . import td3
from .td3 import Batch, ReplayBuffer, Td3Nets


@dataclass(frozen=True)
class LossBreakdown:
    l_bc: float
    l_a: float
    l_q: float

    @property
    def total(self) -> float:
        return self.l_bc + self.l_a + self.l_q


@dataclass
class MixedBatch:
    expert_part: Batch
    agent_part: Batch
    ratio: float

    @property
    def batch(self) -> Batch:
        return Batch.concat([self.expert_part, self.agent_part])


def bc_label(batch: Batch, nets: Td3Nets) -> np.ndarray:
    """Expert action expressed in the agent's action space.

    An agent that owns the actuator clones a^E directly. A residual agent
    reproduces the expert when its correction is zero, so its label is 0.
    """
    if nets.cfg.residual:
        return np.zeros(len(batch))
    return batch.a_expert


def bc_objective(batch: Batch, nets: Td3Nets, a_agent: np.ndarray) -> tuple[float, np.ndarray]:
    """Cloning term over the expert rows of the batch only (mean over those rows)."""
    mask = batch.is_expert.astype(float)
    n = max(mask.sum(), 1.0)
    err = (a_agent - bc_label(batch, nets)) * mask
    return float(0.5 * np.sum(err**2) / n), err / n


def bc_loss(batch: Batch, nets: Td3Nets) -> tuple[float, np.ndarray]:
    """Mean 1/2 (a^E - a^A(s))^2 and the actor gradient it induces."""
    if len(batch) == 0:
        raise ValueError("bc_loss on an empty batch")
    a = nets.policy(batch.s)
    loss, da = bc_objective(batch, nets, a)
    nets.actor_backward(da)
    return loss, nets.actor.grad.copy()


@contextmanager
def superposed_critic(nets: Td3Nets, on: bool):
    old = nets.cfg.superposed
    nets.cfg.superposed = on
    try:
        yield nets
    finally:
        nets.cfg.superposed = old


def col_loss(batch: Batch, nets: Td3Nets) -> LossBreakdown:
    """BC + actor + critic loss, evaluated with noise-free targets.

    Leaves the combined BC/actor gradient in ``nets.actor.grad`` and the
    critic gradients in ``nets.critic{1,2}.grad``; no parameters change.
    """
    if len(batch) == 0:
        raise ValueError("col_loss on an empty batch")
    target = td3.compute_target(batch, nets)
    a = nets.policy(batch.s)
    l_bc, d_bc = bc_objective(batch, nets, a)
    l_a, d_a = td3.actor_objective(batch, nets, a)
    l_q, _ = td3.critic_loss(batch, nets, target)
    nets.actor_backward(d_bc + d_a)
    return LossBreakdown(l_bc, l_a, l_q)


def check_specialized(batch: Batch, specialized) -> None:
    bad = ~np.isin(batch.hidden, list(specialized))
    if np.any(bad):
        raise ValueError(f"{int(bad.sum())} samples are outside the specialized hidden states "
                         f"{sorted(specialized)}; gate before building the batch")


def col_sdrprl_loss(batch: Batch, nets: Td3Nets, specialized) -> LossBreakdown:
    """Cycle-of-learning loss on specialized states with the critic at a^E + a^A."""
    check_specialized(batch, specialized)
    with superposed_critic(nets, True):
        return col_loss(batch, nets)


def col_update(nets: Td3Nets, batch: Batch, step_index: int, bc: bool = True,
               train_critic: bool = True, train_actor: bool = True) -> dict:
    terms = {"l_a": td3.actor_objective}
    if bc:
        terms = {"l_bc": bc_objective, **terms}
    m = td3.update_step(nets, batch, step_index, terms, train_critic=train_critic, train_actor=train_actor)
    if "l_a" in m:
        m["total"] = m.get("l_bc", 0.0) + m["l_a"] + m["l_q1"]
    return m


def split_sizes(batch_size: int, ratio: float) -> tuple[int, int]:
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"expert ratio must lie in [0, 1], got {ratio}")
    n_e = min(int(math.floor(ratio * batch_size + 0.5)), batch_size)
    return n_e, batch_size - n_e


def mix_batch(b_e: ReplayBuffer, b_a: ReplayBuffer, batch_size: int, ratio: float,
              rng: np.random.Generator) -> MixedBatch:
    n_e, n_a = split_sizes(batch_size, ratio)
    if len(b_e) < n_e or len(b_a) < n_a:
        raise ValueError(f"insufficient buffer contents: need {n_e} expert / {n_a} agent, "
                         f"have {len(b_e)} / {len(b_a)}")
    return MixedBatch(b_e.sample(n_e, rng), b_a.sample(n_a, rng), ratio)


def pretrain(b_e: ReplayBuffer, nets: Td3Nets, steps: int, loss: str = "col", seed: int = 0) -> list[dict]:
    """Offline optimisation on expert batches; the result seeds the target networks.

    ``loss`` is "col" (BC + actor + critic) or "bc" (actor cloning only).
    """
    if loss not in ("col", "bc"):
        raise ValueError(f"unknown pretraining loss {loss!r}")
    if steps <= 0:
        return []
    if len(b_e) == 0:
        raise ValueError("pretraining needs a non-empty expert buffer")
    rng = np.random.default_rng(seed)
    n = min(nets.cfg.batch_size, len(b_e))
    history = []
    for k in range(1, steps + 1):
        batch = b_e.sample(n, rng)
        if loss == "col":
            history.append(col_update(nets, batch, k))
        else:
            l_bc, _ = bc_loss(batch, nets)
            nets.actor.apply_update(None, nets.cfg.lr_actor)
            history.append({"step": k, "l_bc": l_bc})
    nets.targets_sync()
    return history


@dataclass
class ExpertData:
    buffer: ReplayBuffer
    episodes: list

    def sequences(self):
        return [ep.iohmm_sequence() for ep in self.episodes]


def collect_expert(plant_cfg, disturbance, gains, episodes: int, seed: int,
                   gamma: float = 0.99, capacity: int | None = None) -> ExpertData:
    """PID-only rollouts stored as transitions with a_agent = 0."""
    from .rollout import derive_seed, run_episode

    capacity = capacity or max(episodes * plant_cfg.n_steps, 1)
    buf = ReplayBuffer(capacity, plant_cfg.obs_size, tag="expert")
    logs = []
    for ep in range(episodes):
        log = run_episode(plant_cfg, disturbance, gains, derive_seed(seed, 0, ep), "pid_only",
                          on_transition=lambda tr, g: buf.add(tr), gamma=gamma, episode=ep)
        logs.append(log)
    return ExpertData(buf, logs)
