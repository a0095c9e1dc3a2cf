"""Small numpy network engine: dense and LSTM layers, analytic backprop, Adam.

Every network owns one flat float64 parameter vector; layer weights are
reshaped views into it, so the flat view and the structured layers can never
drift apart. Gradients live in a second flat vector laid out the same way.
"""
from __future__ import annotations

import copy
import io
import json

import numpy as np

FORMAT_VERSION = 1


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


ACTIVATIONS = {
    "linear": (lambda z: z, lambda z, a: np.ones_like(z)),
    "relu": (lambda z: np.maximum(z, 0.0), lambda z, a: (z > 0).astype(z.dtype)),
    "sigmoid": (_sigmoid, lambda z, a: a * (1.0 - a)),
    "tanh": (np.tanh, lambda z, a: 1.0 - a * a),
}


class NetError(ValueError):
    pass


class Layer:
    """Base layer. Subclasses declare parameter shapes and bind views."""

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        return {}

    def bind(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.p = params
        self.g = grads

    def init(self, rng: np.random.Generator) -> None:
        pass

    def spec(self) -> dict:
        raise NotImplementedError


class Dense(Layer):
    def __init__(self, n_in: int, n_out: int, activation: str = "linear"):
        if activation not in ACTIVATIONS:
            raise NetError(f"unknown activation {activation!r}")
        self.n_in, self.n_out, self.activation = n_in, n_out, activation
        self._cache = None

    def param_shapes(self):
        return {"W": (self.n_out, self.n_in), "b": (self.n_out,)}

    def init(self, rng):
        bound = 1.0 / np.sqrt(self.n_in)
        self.p["W"][...] = rng.uniform(-bound, bound, self.p["W"].shape)
        self.p["b"][...] = rng.uniform(-bound, bound, self.p["b"].shape)

    def forward(self, x):
        if x.shape[-1] != self.n_in:
            raise NetError(f"Dense expects {self.n_in} inputs, got {x.shape[-1]}")
        z = x @ self.p["W"].T + self.p["b"]
        a = ACTIVATIONS[self.activation][0](z)
        self._cache = (x, z, a)
        return a

    def backward(self, da):
        if self._cache is None:
            raise NetError("backward() called before forward()")
        x, z, a = self._cache
        dz = da * ACTIVATIONS[self.activation][1](z, a)
        self.g["W"] += dz.T @ x
        self.g["b"] += dz.sum(axis=0)
        return dz @ self.p["W"]

    def spec(self):
        return {"type": "dense", "n_in": self.n_in, "n_out": self.n_out, "activation": self.activation}


class LSTM(Layer):
    """LSTM over a (batch, time, features) input; returns the full output sequence.

    Gate order in the stacked weights is input, forget, output, candidate.
    Each forward call starts from the stored (h, c), which is zero unless the
    layer is stateful and has not been reset.
    """

    def __init__(self, n_in: int, n_hidden: int, stateful: bool = False):
        self.n_in, self.n_hidden, self.stateful = n_in, n_hidden, stateful
        self.h0 = self.c0 = None
        self._cache = None

    def param_shapes(self):
        h = self.n_hidden
        return {"Wx": (4 * h, self.n_in), "Wh": (4 * h, h), "b": (4 * h,)}

    def init(self, rng):
        bound = 1.0 / np.sqrt(self.n_hidden)
        for k in ("Wx", "Wh", "b"):
            self.p[k][...] = rng.uniform(-bound, bound, self.p[k].shape)

    def reset_state(self):
        self.h0 = self.c0 = None

    def forward(self, x):
        if x.ndim != 3 or x.shape[-1] != self.n_in:
            raise NetError(f"LSTM expects (batch, time, {self.n_in}), got {x.shape}")
        B, T, _ = x.shape
        H = self.n_hidden
        h = np.zeros((B, H)) if self.h0 is None else np.broadcast_to(self.h0, (B, H)).copy()
        c = np.zeros((B, H)) if self.c0 is None else np.broadcast_to(self.c0, (B, H)).copy()
        Wx, Wh, b = self.p["Wx"], self.p["Wh"], self.p["b"]
        xw = x @ Wx.T + b
        steps = []
        out = np.empty((B, T, H))
        for t in range(T):
            z = xw[:, t] + h @ Wh.T
            ifo = _sigmoid(z[:, :3 * H])
            i, f, o = ifo[:, :H], ifo[:, H:2 * H], ifo[:, 2 * H:]
            g = np.tanh(z[:, 3 * H:])
            c_prev, h_prev = c, h
            c = f * c_prev + i * g
            tc = np.tanh(c)
            h = o * tc
            steps.append((h_prev, c_prev, i, f, o, g, tc))
            out[:, t] = h
        if self.stateful:
            self.h0, self.c0 = h, c
        self._cache = (x, steps)
        return out

    def backward(self, dout):
        if self._cache is None:
            raise NetError("backward() called before forward()")
        x, steps = self._cache
        B, T, _ = x.shape
        H = self.n_hidden
        Wx, Wh = self.p["Wx"], self.p["Wh"]
        dx = np.zeros_like(x)
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        dWx = np.zeros_like(Wx)
        dWh = np.zeros_like(Wh)
        db = np.zeros(4 * H)
        for t in reversed(range(T)):
            h_prev, c_prev, i, f, o, g, tc = steps[t]
            dh = dout[:, t] + dh_next
            do = dh * tc
            dc = dh * o * (1.0 - tc * tc) + dc_next
            di = dc * g
            df = dc * c_prev
            dg = dc * i
            dz = np.concatenate(
                [di * i * (1 - i), df * f * (1 - f), do * o * (1 - o), dg * (1 - g * g)], axis=1
            )
            dWx += dz.T @ x[:, t]
            dWh += dz.T @ h_prev
            db += dz.sum(axis=0)
            dx[:, t] = dz @ Wx
            dh_next = dz @ Wh
            dc_next = dc * f
        self.g["Wx"] += dWx
        self.g["Wh"] += dWh
        self.g["b"] += db
        return dx

    def spec(self):
        return {"type": "lstm", "n_in": self.n_in, "n_hidden": self.n_hidden, "stateful": self.stateful}


class Reshape(Layer):
    """Flat (batch, T*F) observation to a (batch, T, F) sequence."""

    def __init__(self, steps: int, features: int):
        self.steps, self.features = steps, features

    def forward(self, x):
        return x.reshape(x.shape[0], self.steps, self.features)

    def backward(self, d):
        return d.reshape(d.shape[0], self.steps * self.features)

    def spec(self):
        return {"type": "reshape", "steps": self.steps, "features": self.features}


class LastStep(Layer):
    def forward(self, x):
        self._T = x.shape[1]
        return x[:, -1]

    def backward(self, d):
        out = np.zeros((d.shape[0], self._T, d.shape[1]))
        out[:, -1] = d
        return out

    def spec(self):
        return {"type": "last"}


_LAYER_TYPES = {"dense": Dense, "lstm": LSTM, "reshape": Reshape, "last": LastStep}


class Adam:
    def __init__(self, size: int, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0


class Network:
    """Feed-forward stack of layers over a shared flat parameter vector."""

    def __init__(self, layers: list[Layer], seed: int | np.random.Generator | None = 0):
        self.layers = layers
        shapes = []
        for li, layer in enumerate(layers):
            for name, shape in layer.param_shapes().items():
                shapes.append((li, name, shape))
        size = sum(int(np.prod(s)) for _, _, s in shapes)
        self.theta = np.zeros(size)
        self.grad = np.zeros(size)
        self._slices = []
        offset = 0
        per_layer = [({}, {}) for _ in layers]
        for li, name, shape in shapes:
            n = int(np.prod(shape))
            per_layer[li][0][name] = self.theta[offset:offset + n].reshape(shape)
            per_layer[li][1][name] = self.grad[offset:offset + n].reshape(shape)
            self._slices.append((li, name, offset, offset + n))
            offset += n
        for layer, (p, g) in zip(layers, per_layer):
            layer.bind(p, g)
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        for layer in layers:
            layer.init(rng)
        self.opt = Adam(size)
        self._forwarded = False

    @property
    def size(self) -> int:
        return self.theta.size

    def forward(self, x):
        x = np.asarray(x, dtype=float)
        for layer in self.layers:
            x = layer.forward(x)
        self._forwarded = True
        return x

    __call__ = forward

    def backward(self, dout, accumulate: bool = False):
        """Backprop dL/d(output); fills self.grad and returns dL/d(input)."""
        if not self._forwarded:
            raise NetError("backward() called before forward()")
        if not accumulate:
            self.grad[...] = 0.0
        d = np.asarray(dout, dtype=float)
        for layer in reversed(self.layers):
            d = layer.backward(d)
        return d

    def zero_grad(self):
        self.grad[...] = 0.0

    def reset_state(self):
        for layer in self.layers:
            if isinstance(layer, LSTM):
                layer.reset_state()

    def apply_update(self, grad: np.ndarray | None, lr: float) -> None:
        """One Adam step (bias-corrected moments) on the flat parameters."""
        g = self.grad if grad is None else np.asarray(grad, dtype=float)
        if g.shape != self.theta.shape:
            raise NetError(f"gradient size {g.shape} does not match parameters {self.theta.shape}")
        if not np.all(np.isfinite(g)):
            bad = next(li for li, _, a, b in self._slices if not np.all(np.isfinite(g[a:b])))
            raise NetError(f"non-finite gradient entries in layer {bad}")
        opt = self.opt
        opt.t += 1
        opt.m = opt.beta1 * opt.m + (1 - opt.beta1) * g
        opt.v = opt.beta2 * opt.v + (1 - opt.beta2) * g * g
        m_hat = opt.m / (1 - opt.beta1 ** opt.t)
        v_hat = opt.v / (1 - opt.beta2 ** opt.t)
        self.theta -= lr * m_hat / (np.sqrt(v_hat) + opt.eps)

    def architecture(self) -> list[dict]:
        return [layer.spec() for layer in self.layers]

    @classmethod
    def from_architecture(cls, arch: list[dict]) -> "Network":
        layers = []
        for spec in arch:
            spec = dict(spec)
            kind = spec.pop("type")
            layers.append(_LAYER_TYPES[kind](**spec))
        return cls(layers, seed=0)

    def clone(self) -> "Network":
        """Independent copy of parameters and optimizer moments."""
        other = Network.from_architecture(self.architecture())
        other.theta[...] = self.theta
        other.opt = copy.deepcopy(self.opt)
        return other

    def save(self, path) -> None:
        """Text checkpoint: one JSON header line, then parameters and Adam moments."""
        header = {"format": "hybridctl-net", "version": FORMAT_VERSION,
                  "layers": self.architecture(), "size": self.size, "adam_t": self.opt.t}
        with open(path, "w") as fh:
            fh.write(json.dumps(header) + "\n")
            buf = io.StringIO()
            np.savetxt(buf, np.stack([self.theta, self.opt.m, self.opt.v]), fmt="%.17g")
            fh.write(buf.getvalue())

    @classmethod
    def load(cls, path) -> "Network":
        with open(path) as fh:
            header = json.loads(fh.readline())
            data = np.loadtxt(fh, ndmin=2)
        if header.get("format") != "hybridctl-net" or header.get("version") != FORMAT_VERSION:
            raise NetError(f"{path}: unsupported checkpoint header {header.get('format')!r} "
                           f"v{header.get('version')}")
        net = cls.from_architecture(header["layers"])
        if data.shape != (3, net.size):
            raise NetError(f"{path}: expected {net.size} parameters, found {data.shape}")
        net.theta[...] = data[0]
        net.opt.m[...] = data[1]
        net.opt.v[...] = data[2]
        net.opt.t = header["adam_t"]
        return net


def polyak(target: Network, online: Network, rho: float) -> Network:
    """target <- rho * target + (1 - rho) * online, in place."""
    if not 0.0 <= rho <= 1.0:
        raise NetError(f"rho must lie in [0, 1], got {rho}")
    if target.architecture() != online.architecture():
        raise NetError("polyak: target and online architectures differ")
    target.theta *= rho
    target.theta += (1.0 - rho) * online.theta
    return target


def mlp(sizes: list[int], hidden: str = "relu", out: str = "linear", seed=0) -> Network:
    layers = []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        layers.append(Dense(a, b, out if i == len(sizes) - 2 else hidden))
    return Network(layers, seed)


def recurrent_actor(steps: int, features: int, hidden=(64, 32), seed=0) -> Network:
    """Two stacked LSTMs over the history window, then one sigmoid unit."""
    layers: list[Layer] = [Reshape(steps, features)]
    n_in = features
    for h in hidden:
        layers.append(LSTM(n_in, h))
        n_in = h
    layers += [LastStep(), Dense(n_in, 1, "sigmoid")]
    return Network(layers, seed)


def numerical_gradient(net: Network, x: np.ndarray, upstream: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central differences of sum(upstream * net(x)) w.r.t. every parameter."""
    grad = np.zeros(net.size)
    for k in range(net.size):
        old = net.theta[k]
        net.theta[k] = old + eps
        fp = float(np.sum(upstream * net.forward(x)))
        net.theta[k] = old - eps
        fm = float(np.sum(upstream * net.forward(x)))
        net.theta[k] = old
        grad[k] = (fp - fm) / (2 * eps)
    return grad


def gradient_check(net: Network, x, upstream, eps: float = 1e-5, rtol: float = 1e-4,
                   atol: float = 1e-7) -> tuple[bool, float]:
    """Compare analytic and central-difference gradients.

    An entry passes when its absolute error is below ``atol`` or its relative
    error (w.r.t. the larger magnitude) is below ``rtol``. Returns the verdict
    and the worst relative error among entries above the absolute floor.
    """
    net.forward(x)
    net.backward(upstream)
    analytic = net.grad.copy()
    numeric = numerical_gradient(net, x, upstream, eps)
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    rel = np.where(diff > atol, diff / np.maximum(scale, 1e-300), 0.0)
    worst = float(rel.max()) if rel.size else 0.0
    return worst < rtol, worst
