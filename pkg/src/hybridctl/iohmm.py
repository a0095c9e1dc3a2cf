"""Input-output hidden Markov model.

Transitions P(x_t = j | x_{t-1} = i, u_t) are multinomial-logistic in the
input; emissions are Gaussian with an input-affine mean and diagonal
covariance. Fitting is generalised EM: closed-form M-step for the initial
distribution and emissions, monotone gradient ascent for the transition
weights.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.special import logsumexp

VAR_FLOOR = 1e-6


class IohmmError(ValueError):
    pass


class ZeroProbabilityError(IohmmError):
    pass


class DegenerateStateError(IohmmError):
    pass


@dataclass
class IohmmParams:
    initial: np.ndarray          # (N,)
    trans_w: np.ndarray          # (N, N, F_t): logits of P(j | i, u) = softmax_j(trans_w[i, j] . x)
    emis_b: np.ndarray           # (N, m_y, F_e): mean of y given state and input
    emis_var: np.ndarray         # (N, m_y)
    input_transitions: bool = True
    input_emissions: bool = True

    @property
    def n_states(self) -> int:
        return len(self.initial)

    def features(self, U: np.ndarray, conditioned: bool) -> np.ndarray:
        ones = np.ones((len(U), 1))
        return np.hstack([ones, U]) if conditioned else ones

    def transition_matrices(self, U: np.ndarray) -> np.ndarray:
        """(T, N, N) row-stochastic matrices; row t is used to move into step t."""
        X = self.features(U, self.input_transitions)
        logits = np.einsum("ijf,tf->tij", self.trans_w, X)
        return np.exp(logits - logsumexp(logits, axis=2, keepdims=True))

    def log_emissions(self, U: np.ndarray, Y: np.ndarray) -> np.ndarray:
        """(T, N) log densities of y_t under each state."""
        X = self.features(U, self.input_emissions)
        mean = np.einsum("jkf,tf->tjk", self.emis_b, X)
        var = self.emis_var[None]
        return -0.5 * np.sum((Y[:, None, :] - mean) ** 2 / var + np.log(2 * np.pi * var), axis=2)

    def validate(self) -> None:
        if abs(self.initial.sum() - 1) > 1e-9 or np.any(self.initial < 0):
            raise IohmmError("initial distribution must be a probability vector")
        if np.any(self.emis_var <= 0):
            raise IohmmError("emission variances must be positive")

    def to_json(self) -> str:
        return json.dumps({
            "format": "hybridctl-iohmm", "version": 1,
            "n_states": self.n_states,
            "input_transitions": self.input_transitions,
            "input_emissions": self.input_emissions,
            "initial": self.initial.tolist(), "trans_w": self.trans_w.tolist(),
            "emis_b": self.emis_b.tolist(), "emis_var": self.emis_var.tolist(),
        }, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "IohmmParams":
        d = json.loads(text)
        if d.get("format") != "hybridctl-iohmm":
            raise IohmmError("not an IOHMM parameter file")
        return cls(np.array(d["initial"]), np.array(d["trans_w"]), np.array(d["emis_b"]),
                   np.array(d["emis_var"]), d["input_transitions"], d["input_emissions"])


@dataclass
class PosteriorMatrix:
    zeta: np.ndarray
    loglik: float
    xi: np.ndarray | None = None   # (T-1, N, N) pairwise posteriors, t >= 1


def _check(U, Y):
    U = np.asarray(U, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if U.ndim == 1:
        U = U[:, None]
    if Y.ndim == 1:
        Y = Y[:, None]
    if len(U) != len(Y) or len(Y) == 0:
        raise IohmmError(f"input/output sequences must be non-empty and equal length ({len(U)} vs {len(Y)})")
    if not (np.all(np.isfinite(U)) and np.all(np.isfinite(Y))):
        raise IohmmError("sequences must be finite")
    return U, Y


def _forward(params, U, Y):
    logb = params.log_emissions(U, Y)
    shift = logb.max(axis=1, keepdims=True)
    b = np.exp(logb - shift)
    A = params.transition_matrices(U)
    T, N = b.shape
    alpha = np.empty((T, N))
    c = np.empty(T)
    a = params.initial * b[0]
    for t in range(T):
        if t:
            a = (alpha[t - 1] @ A[t]) * b[t]
        c[t] = a.sum()
        if not (c[t] > 0 and np.isfinite(c[t])):
            raise ZeroProbabilityError(f"sequence has zero probability under the model at step {t}")
        alpha[t] = a / c[t]
    loglik = float(np.sum(np.log(c)) + shift.sum())
    return alpha, c, b, A, loglik


def forward_backward(params: IohmmParams, U, Y, pairwise: bool = False) -> PosteriorMatrix:
    U, Y = _check(U, Y)
    alpha, c, b, A, loglik = _forward(params, U, Y)
    T, N = alpha.shape
    beta = np.ones((T, N))
    for t in range(T - 2, -1, -1):
        beta[t] = A[t + 1] @ (b[t + 1] * beta[t + 1]) / c[t + 1]
    zeta = alpha * beta
    zeta /= zeta.sum(axis=1, keepdims=True)
    xi = None
    if pairwise and T > 1:
        xi = alpha[:-1, :, None] * A[1:] * (b[1:] * beta[1:])[:, None, :] / c[1:, None, None]
        xi /= xi.sum(axis=(1, 2), keepdims=True)
    return PosteriorMatrix(zeta, loglik, xi)


def filtered(params: IohmmParams, U, Y) -> np.ndarray:
    """Causal posteriors P(x_t | u_{1..t}, y_{1..t})."""
    U, Y = _check(U, Y)
    return _forward(params, U, Y)[0]


def loglik(params: IohmmParams, U, Y) -> float:
    U, Y = _check(U, Y)
    return _forward(params, U, Y)[4]


def decode(params: IohmmParams, U, Y, smoothed: bool = False) -> int:
    """Most probable hidden state at the last step of the prefix (ties -> lowest index)."""
    post = forward_backward(params, U, Y).zeta if smoothed else filtered(params, U, Y)
    return int(np.argmax(post[-1]))


def decode_all(params: IohmmParams, U, Y, smoothed: bool = True) -> np.ndarray:
    post = forward_backward(params, U, Y).zeta if smoothed else filtered(params, U, Y)
    return np.argmax(post, axis=1)


class IohmmFilter:
    """Incremental forward filter for online gating."""

    def __init__(self, params: IohmmParams):
        self.params = params
        self.reset()

    def reset(self):
        self.alpha = None

    def update(self, u, y) -> np.ndarray:
        U = np.atleast_2d(np.asarray(u, dtype=float).reshape(1, -1))
        Y = np.atleast_2d(np.asarray(y, dtype=float).reshape(1, -1))
        logb = self.params.log_emissions(U, Y)[0]
        b = np.exp(logb - logb.max())
        if self.alpha is None:
            a = self.params.initial * b
        else:
            a = (self.alpha @ self.params.transition_matrices(U)[0]) * b
        s = a.sum()
        if not (s > 0 and np.isfinite(s)):
            raise ZeroProbabilityError("filter update produced zero probability")
        self.alpha = a / s
        return self.alpha

    def state(self) -> int:
        return int(np.argmax(self.alpha))


# ----------------------------------------------------------------------------- EM


def _softmax_objective(W, X, counts):
    """sum_t sum_j counts[t, j] log softmax(W x_t)_j and its gradient (one source state)."""
    logits = X @ W.T
    logp = logits - logsumexp(logits, axis=1, keepdims=True)
    obj = float(np.sum(counts * logp))
    p = np.exp(logp)
    grad = (counts - counts.sum(axis=1, keepdims=True) * p).T @ X
    return obj, grad


def _fit_transition_row(W, X, counts, iters=25):
    obj, grad = _softmax_objective(W, X, counts)
    total = counts.sum()
    if total <= 0:
        return W
    step = 1.0 / max(total, 1.0)
    for _ in range(iters):
        gn = float(np.sum(grad * grad))
        if gn < 1e-14:
            break
        while step > 1e-12:
            W_new = W + step * grad
            obj_new, grad_new = _softmax_objective(W_new, X, counts)
            if obj_new >= obj + 1e-4 * step * gn:
                W, obj, grad = W_new, obj_new, grad_new
                step *= 2.0
                break
            step *= 0.5
        else:
            break
    return W


def _m_step(params: IohmmParams, seqs, posts, var_floor: float) -> IohmmParams:
    N = params.n_states
    initial = np.mean([p.zeta[0] for p in posts], axis=0)
    initial /= initial.sum()
    Xe = np.vstack([params.features(U, params.input_emissions) for U, _ in seqs])
    Ycat = np.vstack([Y for _, Y in seqs])
    G = np.vstack([p.zeta for p in posts])
    emis_b = np.empty_like(params.emis_b)
    emis_var = np.empty_like(params.emis_var)
    for j in range(N):
        w = np.sqrt(G[:, j])[:, None]
        coef, *_ = np.linalg.lstsq(w * Xe, w * Ycat, rcond=None)
        emis_b[j] = coef.T
        resid = Ycat - Xe @ coef
        emis_var[j] = np.maximum(G[:, j] @ resid**2 / G[:, j].sum(), var_floor)
    trans_w = params.trans_w.copy()
    xis = [p.xi for p in posts if p.xi is not None]
    if xis:
        XI = np.concatenate(xis)
        if params.input_transitions:
            Xt = np.vstack([params.features(U, True)[1:] for U, _ in seqs if len(U) > 1])
            for i in range(N):
                trans_w[i] = _fit_transition_row(trans_w[i], Xt, XI[:, i, :])
        else:
            counts = XI.sum(axis=0)
            A = counts / counts.sum(axis=1, keepdims=True)
            trans_w = np.log(np.maximum(A, 1e-300))[:, :, None]
    return IohmmParams(initial, trans_w, emis_b, emis_var, params.input_transitions, params.input_emissions)


@dataclass
class EmResult:
    params: IohmmParams
    trace: list = field(default_factory=list)
    converged: bool = False
    restart: int = 0


def em_iterate(params: IohmmParams, seqs, tolerance: float, max_iters: int,
               min_state_mass: float = 1e-3, var_floor: float = VAR_FLOOR) -> EmResult:
    """Run EM from ``params``; trace[k] is the loglik of the k-th parameter set."""
    trace = []
    converged = False
    for it in range(max_iters + 1):
        posts = [forward_backward(params, U, Y, pairwise=True) for U, Y in seqs]
        ll = sum(p.loglik for p in posts)
        trace.append(ll)
        if it and ll - trace[-2] <= tolerance:
            converged = True
            break
        if it == max_iters:
            break
        mass = np.sum([p.zeta.sum(axis=0) for p in posts], axis=0)
        if np.any(mass < min_state_mass):
            raise DegenerateStateError(
                f"hidden state(s) {np.flatnonzero(mass < min_state_mass).tolist()} collapsed "
                f"(posterior mass {mass.min():.2e}); restart with another seed or fewer states")
        params = _m_step(params, seqs, posts, var_floor)
    return EmResult(params, trace, converged)


def init_params(seqs, n_states: int, rng: np.random.Generator, input_transitions=True,
                input_emissions=True, var_floor: float = VAR_FLOOR) -> IohmmParams:
    """k-means partition of the standardised (input, output) pairs, then one M-step."""
    U0, Y0 = seqs[0]
    d_u, m_y = U0.shape[1], Y0.shape[1]
    Z = np.vstack([np.hstack([U, Y]) for U, Y in seqs])
    scale = Z.std(axis=0)
    Zs = (Z - Z.mean(axis=0)) / np.where(scale > 0, scale, 1.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        _, labels = kmeans2(Zs, n_states, minit="++", seed=rng)
    counts = np.bincount(labels, minlength=n_states)
    for j in np.flatnonzero(counts < 2):
        labels[rng.choice(len(labels), size=2, replace=False)] = j
    G = np.eye(n_states)[labels] * 0.9 + 0.1 / n_states
    f_t = 1 + d_u if input_transitions else 1
    f_e = 1 + d_u if input_emissions else 1
    proto = IohmmParams(np.full(n_states, 1.0 / n_states),
                        0.01 * rng.standard_normal((n_states, n_states, f_t)),
                        np.zeros((n_states, m_y, f_e)), np.ones((n_states, m_y)),
                        input_transitions, input_emissions)
    posts, start = [], 0
    for U, Y in seqs:
        posts.append(PosteriorMatrix(G[start:start + len(U)], 0.0, None))
        start += len(U)
    fitted = _m_step(proto, seqs, posts, var_floor)
    fitted.initial = np.full(n_states, 1.0 / n_states)
    return fitted


def em_fit(sequences, n_states: int = 4, tolerance: float = 10.0, max_iters: int = 100,
           seed: int = 0, restarts: int = 5, input_transitions: bool = True,
           input_emissions: bool = True, min_state_mass: float = 1e-3,
           var_floor: float = VAR_FLOOR) -> EmResult:
    """Fit by EM with k-means initialisation and random restarts; keeps the best loglik."""
    seqs = [_check(U, Y) for U, Y in sequences]
    if not seqs:
        raise IohmmError("em_fit needs at least one sequence")
    if n_states < 1:
        raise IohmmError("n_states must be >= 1")
    rng = np.random.default_rng(seed)
    best, errors = None, []
    for r in range(max(restarts, 1)):
        params = init_params(seqs, n_states, rng, input_transitions, input_emissions, var_floor)
        try:
            res = em_iterate(params, seqs, tolerance, max_iters, min_state_mass, var_floor)
        except (DegenerateStateError, ZeroProbabilityError) as exc:
            errors.append(str(exc))
            continue
        res.restart = r
        if best is None or res.trace[-1] > best.trace[-1]:
            best = res
    if best is None:
        raise DegenerateStateError("all EM restarts failed: " + "; ".join(errors))
    return best
