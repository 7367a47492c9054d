"""Layers with hand-written forward and backward passes.

All layers work on batches laid out as ``(B, C, H, W)``. A layer caches what
its backward pass needs during ``forward``; calling ``backward`` first raises
:class:`~vseg.errors.StateError`. Layers with parameters expose them in
``params`` and the matching gradients in ``grads`` (same keys).
"""
from __future__ import annotations

import numpy as np

from . import kernels
from .errors import ConfigError, ShapeError, StateError
from .tensor import Rng, he_init


class Layer:
    params: dict
    grads: dict

    def __init__(self):
        self.params = {}
        self.grads = {}

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def output_shape(self, shape):
        """Per-sample ``(C, H, W)`` after this layer."""
        return shape

    def _require(self, attr):
        value = getattr(self, attr, None)
        if value is None:
            raise StateError(f"{type(self).__name__}.backward called before forward")
        return value


def _check_batch(x, channels=None):
    if x.ndim != 4:
        raise ShapeError(f"expected (B, C, H, W) input, got shape {x.shape}")
    if channels is not None and x.shape[1] != channels:
        raise ShapeError(f"expected {channels} input channels, got {x.shape[1]}")


class Conv3x3(Layer):
    """Same-padded 3x3 cross-correlation with bias, zero padding of width 1."""

    def __init__(self, in_channels, out_channels, rng: Rng | None = None, dtype=np.float32):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        fan_in = in_channels * 9
        if rng is None:
            w = np.zeros((out_channels, in_channels, 3, 3), dtype=dtype)
        else:
            w = he_init((out_channels, in_channels, 3, 3), fan_in, rng, dtype)
        self.params = {"weight": w, "bias": np.zeros(out_channels, dtype=dtype)}
        self._rows = None

    def output_shape(self, shape):
        return (self.out_channels, shape[1], shape[2])

    def forward(self, x, training=False):
        _check_batch(x, self.in_channels)
        B, C, H, W = x.shape
        w = self.params["weight"]
        xp = np.pad(x.astype(w.dtype, copy=False), ((0, 0), (0, 0), (1, 1), (1, 1)))
        rows = kernels.im2col3x3(xp)
        self._rows = rows
        self._bhw = (B, H, W)
        out = rows @ w.reshape(self.out_channels, C * 9).T
        out += self.params["bias"]
        return np.ascontiguousarray(out.reshape(B, H, W, self.out_channels).transpose(0, 3, 1, 2))

    def backward(self, grad_out):
        rows = self._require("_rows")
        B, H, W = self._bhw
        if grad_out.shape != (B, self.out_channels, H, W):
            raise ShapeError(f"grad_out shape {grad_out.shape} does not match forward output")
        w = self.params["weight"]
        g = np.ascontiguousarray(grad_out.transpose(0, 2, 3, 1)).reshape(B * H * W, self.out_channels)
        self.grads["weight"] = (g.T @ rows).reshape(w.shape)
        self.grads["bias"] = g.sum(axis=0)
        grows = g @ w.reshape(self.out_channels, -1)
        return kernels.col2im3x3(grows, B, H, W)


class Conv1x1(Layer):
    """Pointwise channel projection with bias."""

    def __init__(self, in_channels, out_channels, rng: Rng | None = None, dtype=np.float32):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        if rng is None:
            w = np.zeros((out_channels, in_channels), dtype=dtype)
        else:
            w = he_init((out_channels, in_channels), in_channels, rng, dtype)
        self.params = {"weight": w, "bias": np.zeros(out_channels, dtype=dtype)}
        self._x = None

    def output_shape(self, shape):
        return (self.out_channels, shape[1], shape[2])

    def forward(self, x, training=False):
        _check_batch(x, self.in_channels)
        B, C, H, W = x.shape
        xf = x.reshape(B, C, H * W)
        self._x = xf
        self._hw = (H, W)
        out = np.matmul(self.params["weight"], xf) + self.params["bias"][:, None]
        return out.reshape(B, self.out_channels, H, W)

    def backward(self, grad_out):
        xf = self._require("_x")
        H, W = self._hw
        B = xf.shape[0]
        g = grad_out.reshape(B, self.out_channels, H * W)
        self.grads["weight"] = np.tensordot(g, xf, axes=([0, 2], [0, 2]))
        self.grads["bias"] = g.sum(axis=(0, 2))
        return np.matmul(self.params["weight"].T, g).reshape(B, self.in_channels, H, W)


class ReLU(Layer):
    def __init__(self):
        super().__init__()
        self._mask = None

    def forward(self, x, training=False):
        self._mask = x > 0
        return np.maximum(x, np.zeros((), dtype=x.dtype))  # propagates NaN

    def backward(self, grad_out):
        mask = self._require("_mask")
        return np.where(mask, grad_out, np.zeros((), dtype=grad_out.dtype))


class Dropout(Layer):
    """Inverted dropout; ``rate`` is the probability of DROPPING a unit."""

    def __init__(self, rate: float, rng: Rng):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = float(rate)
        self.rng = rng
        self._mask = None
        self._identity = False

    def forward(self, x, training=False):
        if not training or self.rate == 0.0:
            self._identity = True
            self._mask = None
            return x
        self._identity = False
        keep = self.rng.random(x.shape) >= self.rate
        self._mask = keep.astype(x.dtype) * x.dtype.type(1.0 / (1.0 - self.rate))
        return x * self._mask

    def backward(self, grad_out):
        if self._identity:
            return grad_out
        return grad_out * self._require("_mask")


class MaxPool2x2(Layer):
    """Disjoint 2x2 max pooling; ties route the gradient to the first element."""

    def __init__(self):
        super().__init__()
        self._arg = None

    def output_shape(self, shape):
        return (shape[0], shape[1] // 2, shape[2] // 2)

    def forward(self, x, training=False):
        _check_batch(x)
        if x.shape[2] % 2 or x.shape[3] % 2:
            raise ShapeError(f"max-pool needs even spatial dims, got {x.shape[2:]}")
        out, self._arg = kernels.maxpool2x2_forward(np.ascontiguousarray(x))
        return out

    def backward(self, grad_out):
        arg = self._require("_arg")
        if grad_out.shape != arg.shape:
            raise ShapeError(f"grad_out shape {grad_out.shape} does not match forward output")
        return kernels.maxpool2x2_backward(np.ascontiguousarray(grad_out), arg)


class Upsample2x(Layer):
    """Nearest-neighbour 2x replication."""

    def __init__(self):
        super().__init__()
        self._seen = False

    def output_shape(self, shape):
        return (shape[0], shape[1] * 2, shape[2] * 2)

    def forward(self, x, training=False):
        _check_batch(x)
        self._seen = True
        return x.repeat(2, axis=2).repeat(2, axis=3)

    def backward(self, grad_out):
        if not self._seen:
            raise StateError("Upsample2x.backward called before forward")
        B, C, H2, W2 = grad_out.shape
        return grad_out.reshape(B, C, H2 // 2, 2, W2 // 2, 2).sum(axis=(3, 5))


class Softmax2(Layer):
    """Per-pixel softmax over the channel axis of a ``(B, 2, H, W)`` logit map."""

    def __init__(self):
        super().__init__()
        self._p = None

    def forward(self, x, training=False):
        _check_batch(x, 2)
        z = x - x.max(axis=1, keepdims=True)
        e = np.exp(z)
        self._p = e / e.sum(axis=1, keepdims=True)
        return self._p

    def backward(self, grad_out):
        p = self._require("_p")
        return p * (grad_out - (grad_out * p).sum(axis=1, keepdims=True))
