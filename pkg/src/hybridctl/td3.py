"""Twin-delayed actor-critic learner over the numpy network engine."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .net import Network, mlp, polyak, recurrent_actor


class Td3Error(ValueError):
    pass


@dataclass
class Transition:
    s: np.ndarray
    a_agent: float
    a_expert: float
    r: float
    s_next: np.ndarray
    done: bool
    a_expert_next: float = 0.0
    hidden: int = -1


@dataclass
class Batch:
    """Column-stacked transitions. ``is_expert`` marks samples taken from B^E."""

    s: np.ndarray
    a_agent: np.ndarray
    a_expert: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    done: np.ndarray
    a_expert_next: np.ndarray
    hidden: np.ndarray
    is_expert: np.ndarray

    def __len__(self):
        return len(self.r)

    @classmethod
    def concat(cls, parts: Sequence["Batch"]) -> "Batch":
        parts = [p for p in parts if len(p)]
        if not parts:
            raise Td3Error("cannot concatenate zero non-empty batches")
        return cls(*(np.concatenate([getattr(p, f) for p in parts]) for f in cls.__dataclass_fields__))

    def select(self, mask) -> "Batch":
        return Batch(*(getattr(self, f)[mask] for f in self.__dataclass_fields__))


class ReplayBuffer:
    """FIFO ring buffer of transitions; ``tag`` is "expert" or "agent"."""

    def __init__(self, capacity: int, obs_size: int, tag: str = "agent"):
        if capacity < 1:
            raise Td3Error("buffer capacity must be positive")
        self.capacity, self.obs_size, self.tag = capacity, obs_size, tag
        self.s = np.zeros((capacity, obs_size))
        self.s_next = np.zeros((capacity, obs_size))
        self.a_agent = np.zeros(capacity)
        self.a_expert = np.zeros(capacity)
        self.a_expert_next = np.zeros(capacity)
        self.r = np.zeros(capacity)
        self.done = np.zeros(capacity, dtype=bool)
        self.hidden = np.full(capacity, -1, dtype=int)
        self.ptr = 0
        self.size = 0

    def __len__(self):
        return self.size

    def add(self, tr: Transition) -> None:
        if not (np.isfinite(tr.r) and tr.r <= 0):
            raise Td3Error(f"transition reward must be finite and <= 0, got {tr.r}")
        i = self.ptr
        self.s[i] = tr.s
        self.s_next[i] = tr.s_next
        self.a_agent[i] = tr.a_agent
        self.a_expert[i] = tr.a_expert
        self.a_expert_next[i] = tr.a_expert_next
        self.r[i] = tr.r
        self.done[i] = tr.done
        self.hidden[i] = tr.hidden
        self.ptr = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def _ordered(self) -> np.ndarray:
        if self.size < self.capacity:
            return np.arange(self.size)
        return (np.arange(self.size) + self.ptr) % self.capacity

    def batch(self, idx=None) -> Batch:
        idx = self._ordered() if idx is None else np.asarray(idx)
        return Batch(self.s[idx], self.a_agent[idx], self.a_expert[idx], self.r[idx],
                     self.s_next[idx], self.done[idx], self.a_expert_next[idx],
                     self.hidden[idx], np.full(len(idx), self.tag == "expert"))

    def sample(self, n: int, rng: np.random.Generator) -> Batch:
        if n > self.size:
            raise Td3Error(f"{self.tag} buffer holds {self.size} transitions, {n} requested")
        return self.batch(rng.choice(self.size, size=n, replace=False))

    def filtered(self, mask_fn: Callable[[Batch], np.ndarray], tag: str | None = None) -> "ReplayBuffer":
        """New buffer holding the transitions whose rows satisfy ``mask_fn``."""
        b = self.batch()
        keep = np.flatnonzero(mask_fn(b))
        out = ReplayBuffer(max(len(keep), 1), self.obs_size, tag or self.tag)
        for j in keep:
            out.add(Transition(b.s[j], b.a_agent[j], b.a_expert[j], b.r[j], b.s_next[j],
                               bool(b.done[j]), b.a_expert_next[j], int(b.hidden[j])))
        return out


@dataclass
class Td3Config:
    gamma: float = 0.99
    rho: float = 0.995
    policy_delay: int = 2
    smoothing_sd: float = 0.1
    smoothing_clip: float = 0.25
    explore_sd: float = 0.1
    explore_sd_final: float = 0.0
    batch_size: int = 64
    capacity: int = 100_000
    lr_actor: float = 1e-4
    lr_critic: float = 1e-3
    actor_hidden: tuple = (64, 32)
    critic_hidden: tuple = (64, 32)
    residual: bool = True
    r_scale: float = 0.5
    # critic sees a^E + a^A instead of a^A alone
    superposed: bool = False
    u_bounds: tuple = (0.0, 1.0)
    # fixed affine input scaling (s - center) / scale shared by actor and critics
    obs_center: tuple | None = None
    obs_scale: tuple | None = None
    # critics learn the return of reward_scale * r; a positive factor leaves the optimal policy unchanged
    reward_scale: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise Td3Error(f"gamma must lie in [0, 1), got {self.gamma}")
        if self.policy_delay < 1:
            raise Td3Error("policy_delay must be >= 1")
        if not self.reward_scale > 0:
            raise Td3Error("reward_scale must be positive")


class Td3Nets:
    """Actor, twin critics and their target copies."""

    def __init__(self, obs_size: int, history_steps: int, cfg: Td3Config, seed: int = 0):
        if obs_size % history_steps:
            raise Td3Error("observation size must be a multiple of the history length")
        self.cfg = cfg
        self.obs_size = obs_size
        rng = np.random.default_rng(seed)
        self.actor = recurrent_actor(history_steps, obs_size // history_steps, cfg.actor_hidden, seed=rng)
        self.critic1 = mlp([obs_size + 1, *cfg.critic_hidden, 1], seed=rng)
        self.critic2 = mlp([obs_size + 1, *cfg.critic_hidden, 1], seed=rng)
        self.target_actor = self.actor.clone()
        self.target_critic1 = self.critic1.clone()
        self.target_critic2 = self.critic2.clone()
        self.rng = np.random.default_rng(rng.integers(2**63))

    # action space of the agent head
    @property
    def action_range(self) -> tuple[float, float]:
        c = self.cfg
        return (-c.r_scale, c.r_scale) if c.residual else tuple(c.u_bounds)

    def map_action(self, sigma: np.ndarray) -> np.ndarray:
        lo, hi = self.action_range
        return lo + (hi - lo) * sigma

    @property
    def action_slope(self) -> float:
        lo, hi = self.action_range
        return hi - lo

    def policy(self, s, target: bool = False) -> np.ndarray:
        net = self.target_actor if target else self.actor
        return self.map_action(net.forward(self.normalize(np.atleast_2d(s)))[:, 0])

    def actor_backward(self, d_action: np.ndarray) -> None:
        self.actor.backward((d_action * self.action_slope)[:, None])

    def critic_action(self, a_agent, a_expert):
        return a_expert + a_agent if self.cfg.superposed else a_agent

    def stored_action(self, batch: Batch) -> np.ndarray:
        """Agent-space action recorded in each sample.

        Expert samples store a_agent = 0; for an agent that owns the whole
        actuator, the expert's executed action a^E is the equivalent.
        """
        a = batch.a_agent
        if not self.cfg.residual:
            a = np.where(batch.is_expert, batch.a_expert, a)
        return a

    def normalize(self, s: np.ndarray) -> np.ndarray:
        c = self.cfg
        if c.obs_center is not None:
            s = s - np.asarray(c.obs_center)
        if c.obs_scale is not None:
            s = s / np.asarray(c.obs_scale)
        return s

    def q(self, critic: Network, s, a) -> np.ndarray:
        return critic.forward(np.column_stack([self.normalize(s), a]))[:, 0]

    def targets_sync(self) -> None:
        for t, o in ((self.target_actor, self.actor), (self.target_critic1, self.critic1),
                     (self.target_critic2, self.critic2)):
            t.theta[...] = o.theta

    def clone(self) -> "Td3Nets":
        other = object.__new__(Td3Nets)
        other.cfg = replace(self.cfg)
        other.obs_size = self.obs_size
        for k in ("actor", "critic1", "critic2", "target_actor", "target_critic1", "target_critic2"):
            setattr(other, k, getattr(self, k).clone())
        other.rng = np.random.default_rng()
        other.rng.bit_generator.state = self.rng.bit_generator.state
        return other


def compute_target(batch: Batch, nets: Td3Nets, noise: np.ndarray | None = None) -> np.ndarray:
    """One-step bootstrap R = r + gamma (1 - done) min(Q1', Q2')(s', pi'(s') + noise).

    ``noise`` is the raw smoothing noise; it is clipped to +-smoothing_clip here.
    Pure: no parameters or RNG state change.
    """
    if len(batch) == 0:
        raise Td3Error("compute_target on an empty batch")
    cfg = nets.cfg
    a_next = nets.policy(batch.s_next, target=True)
    if noise is not None:
        a_next = a_next + np.clip(noise, -cfg.smoothing_clip, cfg.smoothing_clip)
        a_next = np.clip(a_next, *nets.action_range)
    qa = nets.critic_action(a_next, batch.a_expert_next)
    q1 = nets.q(nets.target_critic1, batch.s_next, qa)
    q2 = nets.q(nets.target_critic2, batch.s_next, qa)
    target = cfg.reward_scale * batch.r + cfg.gamma * (1.0 - batch.done) * np.minimum(q1, q2)
    if not np.all(np.isfinite(target)):
        raise Td3Error("non-finite critic target")
    return target


def critic_loss(batch: Batch, nets: Td3Nets, target: np.ndarray) -> tuple[float, float]:
    """Mean 1/2 (R - Q_i(s, a))^2 per critic; gradients land in each critic's grad."""
    n = len(batch)
    if n == 0:
        raise Td3Error("critic_loss on an empty batch")
    a = nets.critic_action(nets.stored_action(batch), batch.a_expert)
    losses = []
    for critic in (nets.critic1, nets.critic2):
        q = nets.q(critic, batch.s, a)
        err = q - target
        losses.append(float(0.5 * np.mean(err**2)))
        critic.backward((err / n)[:, None])
    return losses[0], losses[1]


def actor_objective(batch: Batch, nets: Td3Nets, a_agent: np.ndarray) -> tuple[float, np.ndarray]:
    """-mean Q1(s, a) and its derivative w.r.t. the agent action (critic grads discarded)."""
    n = len(batch)
    qa = nets.critic_action(a_agent, batch.a_expert)
    x = np.column_stack([nets.normalize(batch.s), qa])
    q = nets.critic1.forward(x)[:, 0]
    dx = nets.critic1.backward(np.full((n, 1), -1.0 / n))
    nets.critic1.zero_grad()
    return -float(np.mean(q)), dx[:, -1]


def actor_loss(batch: Batch, nets: Td3Nets) -> tuple[float, np.ndarray]:
    if len(batch) == 0:
        raise Td3Error("actor_loss on an empty batch")
    a = nets.policy(batch.s)
    loss, da = actor_objective(batch, nets, a)
    nets.actor_backward(da)
    return loss, nets.actor.grad.copy()


ActorTerm = Callable[[Batch, Td3Nets, np.ndarray], tuple[float, np.ndarray]]


def update_step(nets: Td3Nets, batch: Batch, step_index: int,
                actor_terms: dict[str, ActorTerm] | None = None,
                train_critic: bool = True, train_actor: bool = True) -> dict:
    """Critic update every call; actor and Polyak target update every policy_delay calls.

    ``actor_terms`` maps metric names to objectives of the agent action whose
    derivatives are summed before one actor backward pass (default: the
    deterministic policy-gradient objective alone).
    """
    cfg = nets.cfg
    metrics: dict = {"step": step_index}
    if train_critic:
        noise = cfg.smoothing_sd * nets.rng.standard_normal(len(batch))
        target = compute_target(batch, nets, noise)
        l1, l2 = critic_loss(batch, nets, target)
        nets.critic1.apply_update(None, cfg.lr_critic)
        # critic2's grad survives critic1's update untouched
        nets.critic2.apply_update(None, cfg.lr_critic)
        metrics.update(l_q1=l1, l_q2=l2)
    if step_index % cfg.policy_delay == 0:
        if train_actor:
            terms = actor_terms or {"l_a": actor_objective}
            a = nets.policy(batch.s)
            total_grad = np.zeros(len(batch))
            # objectives must not run the actor forward, its cache is needed below
            for name, fn in terms.items():
                val, da = fn(batch, nets, a)
                metrics[name] = val
                total_grad += da
            nets.actor_backward(total_grad)
            nets.actor.apply_update(None, cfg.lr_actor)
        polyak(nets.target_actor, nets.actor, cfg.rho)
        polyak(nets.target_critic1, nets.critic1, cfg.rho)
        polyak(nets.target_critic2, nets.critic2, cfg.rho)
    return metrics
