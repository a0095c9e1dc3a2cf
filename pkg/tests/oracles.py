"""Independent reference computations used by the tests."""
import itertools

import numpy as np


def gauss_logpdf(y, mean, var):
    return float(-0.5 * np.sum((y - mean) ** 2 / var + np.log(2 * np.pi * var)))


def iohmm_path_posteriors(params, U, Y):
    """Enumerate every hidden path: (smoothed marginals (T, N), total likelihood).

    Written from the model definition only: transition rows are softmax of
    trans_w[i] . [1, u_t], emission means are emis_b[j] . [1, u_t].
    """
    T, N = len(Y), params.n_states

    def feat(u, on):
        return np.concatenate([[1.0], u]) if on else np.array([1.0])

    def trans(i, t):
        z = params.trans_w[i] @ feat(U[t], params.input_transitions)
        z = np.exp(z - z.max())
        return z / z.sum()

    def emit(j, t):
        mean = params.emis_b[j] @ feat(U[t], params.input_emissions)
        return np.exp(gauss_logpdf(Y[t], mean, params.emis_var[j]))

    marg = np.zeros((T, N))
    total = 0.0
    for path in itertools.product(range(N), repeat=T):
        p = params.initial[path[0]] * emit(path[0], 0)
        for t in range(1, T):
            p *= trans(path[t - 1], t)[path[t]] * emit(path[t], t)
        total += p
        for t, k in enumerate(path):
            marg[t, k] += p
    return marg / total, total


def chain_values(rewards, gamma):
    """V of a deterministic cycle through len(rewards) states (geometric series)."""
    n = len(rewards)
    out = []
    for s in range(n):
        # one lap from state s, then the lap repeats forever
        lap = sum(gamma**k * rewards[(s + k) % n] for k in range(n))
        out.append(lap / (1 - gamma**n))
    return np.array(out)
