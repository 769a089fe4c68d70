"""Dense numerical kernel: forward ops and layers with hand-written backward passes.

Arrays are float64 numpy arrays. Rank-4 tensors use the ``(m, H, W, C)`` layout
throughout. Every layer caches what its backward pass needs during ``forward``
and refuses to run ``backward`` before a forward call.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BatchSizeError, ConfigurationError, DimensionError, StateError

SIGMOID_CLAMP = 500.0
LEAKY_SLOPE = 0.2
BN_EPS = 1e-5
BN_MOMENTUM = 0.9


@dataclass
class LayerGrad:
    param_grads: dict[str, np.ndarray]
    input_grad: np.ndarray


# ---------------------------------------------------------------------------
# forward ops
# ---------------------------------------------------------------------------

def dense_forward(x, weights, bias):
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or weights.ndim != 2 or x.shape[1] != weights.shape[0]:
        raise DimensionError(f"dense: input {x.shape} does not conform to weights {weights.shape}")
    if bias.shape != (weights.shape[1],):
        raise DimensionError(f"dense: bias {bias.shape} does not conform to weights {weights.shape}")
    return x @ weights + bias


def _pad_same(x, k):
    p = k // 2
    return np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))


def conv2d_forward(x, kernels, bias):
    """Stride-1 cross-correlation with zero same-padding.

    Implemented as one matmul per kernel offset, so memory stays at the size
    of the input rather than an im2col buffer.
    """
    x = np.asarray(x, dtype=float)
    k = kernels.shape[0]
    if kernels.ndim != 4 or kernels.shape[1] != k:
        raise ConfigurationError(f"conv2d: kernels must be k x k x Cin x Cout, got {kernels.shape}")
    if k % 2 == 0:
        raise ConfigurationError(f"conv2d: kernel size must be odd, got {k}")
    if x.ndim != 4 or x.shape[3] != kernels.shape[2]:
        raise DimensionError(f"conv2d: input {x.shape} does not conform to kernels {kernels.shape}")
    if bias.shape != (kernels.shape[3],):
        raise DimensionError(f"conv2d: bias {bias.shape} does not conform to kernels {kernels.shape}")
    m, h, w, _ = x.shape
    xp = _pad_same(x, k)
    out = np.zeros((m, h, w, kernels.shape[3]))
    for dy in range(k):
        for dx in range(k):
            out += xp[:, dy:dy + h, dx:dx + w, :] @ kernels[dy, dx]
    out += bias
    return out


def _check_factors(factors):
    fy, fx = factors
    if int(fy) != fy or int(fx) != fx or fy < 1 or fx < 1:
        raise ConfigurationError(f"upsample factors must be positive integers, got {factors}")
    return int(fy), int(fx)


def upsample2d(x, factors):
    fy, fx = _check_factors(factors)
    x = np.asarray(x, dtype=float)
    if x.ndim != 4:
        raise DimensionError(f"upsample2d expects a rank-4 input, got {x.shape}")
    return np.repeat(np.repeat(x, fy, axis=1), fx, axis=2)


def avgpool2d(x, factors):
    """Non-overlapping average pooling; the left inverse of ``upsample2d``."""
    fy, fx = _check_factors(factors)
    m, h, w, c = x.shape
    if h % fy or w % fx:
        raise DimensionError(f"avgpool2d: {x.shape} not divisible by {factors}")
    return x.reshape(m, h // fy, fy, w // fx, fx, c).mean(axis=(2, 4))


def sigmoid(x):
    x = np.clip(np.asarray(x, dtype=float), -SIGMOID_CLAMP, SIGMOID_CLAMP)
    return 1.0 / (1.0 + np.exp(-x))


def activation_forward(x, kind, slope=LEAKY_SLOPE):
    x = np.asarray(x, dtype=float)
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "leaky_relu":
        if not 0.0 < slope < 1.0:
            raise ConfigurationError(f"leaky_relu slope must be in (0, 1), got {slope}")
        return np.where(x > 0, x, slope * x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ConfigurationError(f"unknown activation {kind!r}")


def batchnorm_forward(x, gamma, beta, mode="train", eps=BN_EPS, running_mean=None, running_var=None):
    """Normalize over every axis but the last.

    Returns ``(out, normalized, mean, var)``; ``normalized`` is the pre scale-shift value.
    """
    x = np.asarray(x, dtype=float)
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise DimensionError(f"batchnorm: gamma/beta {gamma.shape} do not match input {x.shape}")
    axes = tuple(range(x.ndim - 1))
    if mode == "train":
        if x.shape[0] < 2:
            raise BatchSizeError(f"batchnorm needs at least 2 samples in train mode, got {x.shape[0]}")
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
    elif mode == "infer":
        mean = np.zeros(x.shape[-1]) if running_mean is None else running_mean
        var = np.ones(x.shape[-1]) if running_var is None else running_var
    else:
        raise ConfigurationError(f"unknown batchnorm mode {mode!r}")
    normalized = (x - mean) / np.sqrt(var + eps)
    return gamma * normalized + beta, normalized, mean, var


def dropout_forward(x, rate, mode, rng):
    """Inverted dropout. Returns ``(out, mask)`` where mask already carries the 1/(1-rate) scale."""
    if not 0.0 <= rate < 1.0:
        raise ConfigurationError(f"dropout rate must be in [0, 1), got {rate}")
    x = np.asarray(x, dtype=float)
    if mode == "infer" or rate == 0.0:
        return x, np.ones_like(x)
    keep = rng.random(x.shape) >= rate
    mask = keep / (1.0 - rate)
    return x * mask, mask


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------

def glorot_uniform(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self._cache = None

    def forward(self, x, train=True, update_stats=True):
        raise NotImplementedError

    def backward(self, grad) -> LayerGrad:
        raise NotImplementedError

    def _cached(self):
        if self._cache is None:
            raise StateError(f"{type(self).__name__}.backward called before forward")
        return self._cache

    def config(self) -> dict:
        """Constructor arguments, for checkpoint manifests."""
        return {}

    def buffers(self) -> dict[str, np.ndarray]:
        return {}

    def __repr__(self):
        args = ", ".join(f"{k}={v}" for k, v in self.config().items())
        return f"{type(self).__name__}({args})"


class Dense(Layer):
    kind = "dense"

    def __init__(self, n_in, n_out, rng=None):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params = {
            "W": glorot_uniform(rng, (n_in, n_out), n_in, n_out),
            "b": np.zeros(n_out),
        }

    def forward(self, x, train=True, update_stats=True):
        out = dense_forward(x, self.params["W"], self.params["b"])
        self._cache = np.asarray(x, dtype=float)
        return out

    def backward(self, grad):
        x = self._cached()
        return LayerGrad(
            {"W": x.T @ grad, "b": grad.sum(axis=0)},
            grad @ self.params["W"].T,
        )

    def config(self):
        return {"n_in": self.n_in, "n_out": self.n_out}


class Conv2D(Layer):
    kind = "conv2d"

    def __init__(self, c_in, c_out, size, rng=None):
        super().__init__()
        if size % 2 == 0:
            raise ConfigurationError(f"conv2d: kernel size must be odd, got {size}")
        self.c_in, self.c_out, self.size = c_in, c_out, size
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params = {
            "K": glorot_uniform(rng, (size, size, c_in, c_out), size * size * c_in, size * size * c_out),
            "b": np.zeros(c_out),
        }

    def forward(self, x, train=True, update_stats=True):
        out = conv2d_forward(x, self.params["K"], self.params["b"])
        self._cache = np.asarray(x, dtype=float)
        return out

    def backward(self, grad):
        x = self._cached()
        k = self.size
        m, h, w, cin = x.shape
        cout = self.c_out
        xp = _pad_same(x, k)
        dxp = np.zeros_like(xp)
        dK = np.zeros_like(self.params["K"])
        g2 = grad.reshape(-1, cout)
        K = self.params["K"]
        for dy in range(k):
            for dx in range(k):
                window = xp[:, dy:dy + h, dx:dx + w, :].reshape(-1, cin)
                dK[dy, dx] = window.T @ g2
                dxp[:, dy:dy + h, dx:dx + w, :] += grad @ K[dy, dx].T
        p = k // 2
        dx_ = dxp[:, p:p + h, p:p + w, :]
        return LayerGrad({"K": dK, "b": g2.sum(axis=0)}, dx_)

    def config(self):
        return {"c_in": self.c_in, "c_out": self.c_out, "size": self.size}


class UpSample2D(Layer):
    kind = "upsample2d"

    def __init__(self, factors):
        super().__init__()
        self.factors = _check_factors(factors)

    def forward(self, x, train=True, update_stats=True):
        self._cache = np.shape(x)
        return upsample2d(x, self.factors)

    def backward(self, grad):
        self._cached()
        fy, fx = self.factors
        m, h, w, c = grad.shape
        # each input cell fed an fy x fx tile, so its gradient is the tile sum
        return LayerGrad({}, grad.reshape(m, h // fy, fy, w // fx, fx, c).sum(axis=(2, 4)))

    def config(self):
        return {"factors": list(self.factors)}


class Activation(Layer):
    kind = "activation"

    def __init__(self, fn, slope=LEAKY_SLOPE):
        super().__init__()
        if fn not in ("relu", "leaky_relu", "sigmoid"):
            raise ConfigurationError(f"unknown activation {fn!r}")
        self.fn, self.slope = fn, slope

    def forward(self, x, train=True, update_stats=True):
        out = activation_forward(x, self.fn, self.slope)
        self._cache = (np.asarray(x, dtype=float), out)
        return out

    def backward(self, grad):
        x, out = self._cached()
        if self.fn == "relu":
            local = (x > 0).astype(float)
        elif self.fn == "leaky_relu":
            local = np.where(x > 0, 1.0, self.slope)
        else:
            local = out * (1.0 - out)
        return LayerGrad({}, grad * local)

    def config(self):
        return {"fn": self.fn, "slope": self.slope}


class BatchNorm(Layer):
    """Batch normalization over all axes but the channel axis."""

    kind = "batchnorm"

    def __init__(self, units, eps=BN_EPS, momentum=BN_MOMENTUM):
        super().__init__()
        self.units, self.eps, self.momentum = units, eps, momentum
        self.params = {"gamma": np.ones(units), "beta": np.zeros(units)}
        self.running_mean = np.zeros(units)
        self.running_var = np.ones(units)

    def forward(self, x, train=True, update_stats=True):
        mode = "train" if train else "infer"
        out, xhat, mean, var = batchnorm_forward(
            x, self.params["gamma"], self.params["beta"], mode, self.eps,
            self.running_mean, self.running_var,
        )
        if train and update_stats:
            self.running_mean = self.momentum * self.running_mean + (1 - self.momentum) * mean
            self.running_var = self.momentum * self.running_var + (1 - self.momentum) * var
        self._cache = (mode, xhat, var)
        return out

    def backward(self, grad):
        mode, xhat, var = self._cached()
        axes = tuple(range(grad.ndim - 1))
        gamma = self.params["gamma"]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        dgamma = (grad * xhat).sum(axis=axes)
        dbeta = grad.sum(axis=axes)
        if mode == "infer":
            dx = grad * gamma * inv_std
        else:
            n = grad.size // grad.shape[-1]
            dxhat = grad * gamma
            dx = inv_std / n * (
                n * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes)
            )
        return LayerGrad({"gamma": dgamma, "beta": dbeta}, dx)

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def config(self):
        return {"units": self.units, "eps": self.eps, "momentum": self.momentum}


class Dropout(Layer):
    kind = "dropout"

    def __init__(self, rate, rng=None):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ConfigurationError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.rng = rng if rng is not None else np.random.default_rng(0)

    def forward(self, x, train=True, update_stats=True):
        out, mask = dropout_forward(x, self.rate, "train" if train else "infer", self.rng)
        self._cache = mask
        return out

    def backward(self, grad):
        return LayerGrad({}, grad * self._cached())

    def config(self):
        return {"rate": self.rate}


class Reshape(Layer):
    kind = "reshape"

    def __init__(self, shape):
        super().__init__()
        self.shape = tuple(int(s) for s in shape)

    def forward(self, x, train=True, update_stats=True):
        self._cache = np.shape(x)
        x = np.asarray(x, dtype=float)
        if int(np.prod(x.shape[1:])) != int(np.prod(self.shape)):
            raise DimensionError(f"reshape: cannot view {x.shape[1:]} as {self.shape}")
        return x.reshape((x.shape[0],) + self.shape)

    def backward(self, grad):
        return LayerGrad({}, grad.reshape(self._cached()))

    def config(self):
        return {"shape": list(self.shape)}


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x, train=True, update_stats=True):
        self._cache = np.shape(x)
        return np.asarray(x, dtype=float).reshape(np.shape(x)[0], -1)

    def backward(self, grad):
        return LayerGrad({}, grad.reshape(self._cached()))


LAYER_KINDS = {cls.kind: cls for cls in (Dense, Conv2D, UpSample2D, Activation, BatchNorm, Dropout, Reshape, Flatten)}


@dataclass
class Sequential:
    """An ordered layer stack with a single forward/backward path."""

    layers: list[Layer] = field(default_factory=list)

    def forward(self, x, train=True, update_stats=True):
        for layer in self.layers:
            x = layer.forward(x, train=train, update_stats=update_stats)
        return x

    def backward(self, grad):
        """Backpropagate; returns (input_grad, per-layer LayerGrads in forward order)."""
        grads = []
        for layer in reversed(self.layers):
            lg = layer.backward(grad)
            grads.append(lg)
            grad = lg.input_grad
        grads.reverse()
        return grad, grads

    def parameters(self):
        for i, layer in enumerate(self.layers):
            for name, value in layer.params.items():
                yield f"{i}.{name}", value

    def state(self) -> dict[str, np.ndarray]:
        """Parameters plus non-trainable buffers, keyed ``index.name``."""
        out = dict(self.parameters())
        for i, layer in enumerate(self.layers):
            for name, value in layer.buffers().items():
                out[f"{i}.{name}"] = value
        return out

    def load_state(self, state):
        for key, value in state.items():
            idx, name = key.split(".", 1)
            layer = self.layers[int(idx)]
            if name in layer.params:
                if layer.params[name].shape != value.shape:
                    raise DimensionError(f"{key}: stored {value.shape}, layer expects {layer.params[name].shape}")
                layer.params[name] = np.array(value, dtype=float)
            else:
                setattr(layer, name, np.array(value, dtype=float))

    def sgd_step(self, layer_grads, lr):
        """In-place descent step ``p -= lr * grad`` on every parameter."""
        for layer, lg in zip(self.layers, layer_grads):
            for name, g in lg.param_grads.items():
                layer.params[name] -= lr * g

    def manifest(self):
        return [{"kind": layer.kind, **layer.config()} for layer in self.layers]

    @classmethod
    def from_manifest(cls, entries, rng=None):
        layers = []
        for entry in entries:
            entry = dict(entry)
            kind = entry.pop("kind")
            layer_cls = LAYER_KINDS[kind]
            if layer_cls in (Dense, Conv2D, Dropout):
                entry["rng"] = rng
            layers.append(layer_cls(**entry))
        return cls(layers)
