"""Layers with hand-written forward and backward passes.

Every layer works on a leading batch axis and caches what its backward
pass needs. Parameter gradients are *accumulated* into ``layer.grads`` so
one layer object can be applied to several inputs (weight sharing) before
a single optimizer step; call :meth:`Layer.zero_grad` between steps.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, ShapeError, StateError

LRELU_SLOPE = 0.01


class Layer:
    """Base class: named parameters, matching gradient buffers, cached state."""

    def __init__(self):
        self.params = {}
        self.grads = {}
        self._cache = []

    def zero_grad(self):
        for name, p in self.params.items():
            self.grads[name] = np.zeros_like(p)

    def clear(self):
        self._cache = []

    def _pop(self):
        if not self._cache:
            raise StateError(f"{type(self).__name__}.backward called without a matching forward")
        return self._cache.pop()

    def astype(self, dtype):
        for name in self.params:
            self.params[name] = self.params[name].astype(dtype)
        self.zero_grad()
        return self


def glorot_uniform(shape, fan_in, fan_out, rng, dtype=np.float32):
    """Uniform samples on ``[-a, a]`` with ``a = sqrt(6 / (fan_in + fan_out))``."""
    if fan_in < 1 or fan_out < 1:
        raise ConfigError(f"fans must be >= 1, got fan_in={fan_in}, fan_out={fan_out}")
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def conv_fans(c_in, c_out, kernel):
    return c_in * kernel * kernel, c_out * kernel * kernel


class Conv2d(Layer):
    """Cross-correlation (no kernel flip) with bias, via im2col.

    Weights are ``[C_out, C_in, K, K]``; input ``[N, C_in, H, W]``.
    Forward may be called several times before backward; backward pops
    the cached inputs in LIFO order.
    """

    def __init__(self, weight, bias, stride=1, padding=0):
        super().__init__()
        weight = np.asarray(weight)
        bias = np.asarray(bias)
        if weight.ndim != 4 or weight.shape[2] != weight.shape[3]:
            raise ShapeError(f"conv weight must be [C_out, C_in, K, K], got {weight.shape}")
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"conv bias must be [{weight.shape[0]}], got {bias.shape}")
        if stride < 1 or padding < 0:
            raise ShapeError(f"invalid stride {stride} / padding {padding}")
        self.params = {"weight": weight, "bias": bias}
        self.stride = int(stride)
        self.padding = int(padding)
        self.zero_grad()

    @classmethod
    def glorot(cls, c_in, c_out, kernel, rng, stride=1, padding=0, dtype=np.float32):
        fan_in, fan_out = conv_fans(c_in, c_out, kernel)
        w = glorot_uniform((c_out, c_in, kernel, kernel), fan_in, fan_out, rng, dtype)
        return cls(w, np.zeros(c_out, dtype=dtype), stride, padding)

    @property
    def kernel(self):
        return self.params["weight"].shape[-1]

    def output_size(self, h, w):
        k, s, p = self.kernel, self.stride, self.padding
        if h + 2 * p < k or w + 2 * p < k:
            raise ShapeError(f"{h}x{w} input (padding {p}) is smaller than kernel {k}")
        return (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1

    def forward(self, x):
        w = self.params["weight"]
        if x.ndim != 4 or x.shape[1] != w.shape[1]:
            raise ShapeError(f"conv expects [N, {w.shape[1]}, H, W], got {x.shape}")
        n, c, h, wd = x.shape
        k, s, p = self.kernel, self.stride, self.padding
        ho, wo = self.output_size(h, wd)
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo]
        # (N, C, Ho, Wo, K, K) -> (N*Ho*Wo, C*K*K)
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
        out = cols @ w.reshape(w.shape[0], -1).T + self.params["bias"]
        self._cache.append((x.shape, cols))
        return np.ascontiguousarray(out.reshape(n, ho, wo, -1).transpose(0, 3, 1, 2))

    def backward(self, grad_out, need_input_grad=True):
        x_shape, cols = self._pop()
        w = self.params["weight"]
        n, c, h, wd = x_shape
        k, s, p = self.kernel, self.stride, self.padding
        c_out = w.shape[0]
        ho, wo = grad_out.shape[2:]
        g = grad_out.transpose(0, 2, 3, 1).reshape(-1, c_out)
        self.grads["weight"] += (g.T @ cols).reshape(w.shape)
        self.grads["bias"] += g.sum(axis=0)
        if not need_input_grad:
            return None
        dcols = (g @ w.reshape(c_out, -1)).reshape(n, ho, wo, c, k, k)
        dxp = np.zeros((n, c, h + 2 * p, wd + 2 * p), dtype=grad_out.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i : i + s * ho : s, j : j + s * wo : s] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        if p:
            dxp = dxp[:, :, p:-p, p:-p]
        return np.ascontiguousarray(dxp)


class MaxPool2d(Layer):
    """Non-overlapping max pooling; ties go to the first element in row-major scan order."""

    def __init__(self, window=2):
        super().__init__()
        self.window = int(window)

    def forward(self, x):
        n, c, h, w = x.shape
        k = self.window
        if h % k or w % k:
            raise ShapeError(f"max pool {k}x{k} needs extents divisible by {k}, got {h}x{w}")
        tiles = x.reshape(n, c, h // k, k, w // k, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // k, w // k, k * k)
        idx = tiles.argmax(axis=-1)
        out = np.take_along_axis(tiles, idx[..., None], axis=-1)[..., 0]
        self._cache.append((x.shape, idx))
        return out

    def argmax(self):
        """Window-local argmax indices of the most recent forward."""
        return self._cache[-1][1]

    def backward(self, grad_out):
        x_shape, idx = self._pop()
        n, c, h, w = x_shape
        k = self.window
        tiles = np.zeros((n, c, h // k, w // k, k * k), dtype=grad_out.dtype)
        np.put_along_axis(tiles, idx[..., None], grad_out[..., None], axis=-1)
        return tiles.reshape(n, c, h // k, w // k, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(x_shape)


class Linear(Layer):
    """``y = x W^T + b`` with ``W`` shaped ``[out, in]``."""

    def __init__(self, weight, bias):
        super().__init__()
        weight = np.asarray(weight)
        bias = np.asarray(bias)
        if weight.ndim != 2 or bias.shape != (weight.shape[0],):
            raise ShapeError(f"linear weight {weight.shape} / bias {bias.shape} mismatch")
        self.params = {"weight": weight, "bias": bias}
        self.zero_grad()

    @classmethod
    def glorot(cls, n_in, n_out, rng, dtype=np.float32):
        w = glorot_uniform((n_out, n_in), n_in, n_out, rng, dtype)
        return cls(w, np.zeros(n_out, dtype=dtype))

    def forward(self, x):
        w = self.params["weight"]
        if x.ndim != 2 or x.shape[1] != w.shape[1]:
            raise ShapeError(f"linear expects [N, {w.shape[1]}], got {x.shape}")
        self._cache.append(x)
        return x @ w.T + self.params["bias"]

    def backward(self, grad_out):
        x = self._pop()
        self.grads["weight"] += grad_out.T @ x
        self.grads["bias"] += grad_out.sum(axis=0)
        return grad_out @ self.params["weight"]


class LReLU(Layer):
    """Leaky ReLU with fixed negative slope 0.01; slope 1 at exactly zero."""

    def __init__(self, slope=LRELU_SLOPE):
        super().__init__()
        self.slope = slope

    def forward(self, x):
        neg = x < 0
        self._cache.append(neg)
        return np.where(neg, x * x.dtype.type(self.slope), x)

    def backward(self, grad_out):
        neg = self._pop()
        return np.where(neg, grad_out * grad_out.dtype.type(self.slope), grad_out)


class PReLU(Layer):
    """Leaky ReLU whose negative slope ``p`` is a single learnable scalar."""

    def __init__(self, p=0.05, dtype=np.float32):
        super().__init__()
        self.params = {"p": np.array(p, dtype=dtype)}
        self.zero_grad()

    def forward(self, x):
        neg = x < 0
        self._cache.append((x, neg))
        return np.where(neg, x * self.params["p"], x)

    def backward(self, grad_out):
        x, neg = self._pop()
        self.grads["p"] += np.sum(grad_out * x, where=neg, dtype=np.float64).astype(self.grads["p"].dtype)
        return np.where(neg, grad_out * self.params["p"], grad_out)


def sigmoid(x):
    """Logistic function without overflow for any finite input."""
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(np.result_type(x, np.float32))


class Sigmoid(Layer):
    def forward(self, x):
        y = sigmoid(x)
        self._cache.append(y)
        return y

    def backward(self, grad_out):
        y = self._pop()
        return grad_out * y * (1 - y)


class Dropout(Layer):
    """Inverted dropout: survivors are scaled by ``1 / (1 - rate)``; eval mode is identity."""

    def __init__(self, rate=0.5, rng=None):
        super().__init__()
        if not 0 <= rate < 1:
            raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.rng = rng if rng is not None else np.random.default_rng()

    def forward(self, x, train=False):
        if not train or self.rate == 0:
            self._cache.append(None)
            return x
        keep = self.rng.random(x.shape) >= self.rate
        mask = keep.astype(x.dtype) * x.dtype.type(1.0 / (1.0 - self.rate))
        self._cache.append(mask)
        return x * mask

    def backward(self, grad_out):
        mask = self._pop()
        return grad_out if mask is None else grad_out * mask


def concat(parts):
    """Concatenate ``[N, d_i]`` arrays along the feature axis."""
    if not parts:
        raise ValueError("concat needs at least one part")
    return np.concatenate(parts, axis=-1)


def split_grad(grad, widths):
    """Route a concatenated gradient back to its parts."""
    if sum(widths) != grad.shape[-1]:
        raise ShapeError(f"segment widths {widths} do not sum to {grad.shape[-1]}")
    bounds = np.cumsum(widths)[:-1]
    return np.split(grad, bounds, axis=-1)
