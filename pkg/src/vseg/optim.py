"""Multi-label cross-entropy and RMSprop with momentum."""
from __future__ import annotations

import numpy as np

from .errors import DataError, ShapeError

EPS_PROB = 1e-7


def cross_entropy(y, y_hat, eps: float = EPS_PROB):
    """Binary cross-entropy summed over every pixel of a label patch.

    ``y`` and ``y_hat`` are ``(..., H, W)``; a leading batch axis is reduced by
    the mean of the per-patch sums. Returns ``(loss, grad)`` where ``grad`` is
    d loss / d y_hat with the batch mean folded in, evaluated at the clamped
    probabilities.
    """
    y = np.asarray(y)
    y_hat = np.asarray(y_hat)
    if y.shape != y_hat.shape:
        raise ShapeError(f"label shape {y.shape} != prediction shape {y_hat.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise DataError("labels must be binary {0, 1}")
    p = np.clip(y_hat, eps, 1.0 - eps)
    yf = y.astype(p.dtype)
    per_pixel = -(yf * np.log(p) + (1.0 - yf) * np.log(1.0 - p))
    grad = -yf / p + (1.0 - yf) / (1.0 - p)
    if y.ndim >= 3:
        n = y.shape[0]
        return float(per_pixel.reshape(n, -1).sum(axis=1).mean()), grad / n
    return float(per_pixel.sum()), grad


class RMSprop:
    """RMSprop whose momentum buffer accumulates the preconditioned gradient.

    Per step, for each parameter array::

        v <- rho * v + (1 - rho) * g**2
        u <- momentum * u + g / sqrt(v + eps)
        theta <- theta - lr * u

    Parameters are updated in place.
    """

    def __init__(self, lr=1e-4, momentum=0.7, rho=0.9, eps=1e-8):
        self.lr = lr
        self.momentum = momentum
        self.rho = rho
        self.eps = eps
        self.v = {}
        self.u = {}

    def step(self, params: dict, grads: dict):
        for key, theta in params.items():
            g = grads[key]
            if g.shape != theta.shape:
                raise ShapeError(f"gradient for {key!r} has shape {g.shape}, parameter {theta.shape}")
            if key not in self.v:
                self.v[key] = np.zeros_like(theta)
                self.u[key] = np.zeros_like(theta)
            v, u = self.v[key], self.u[key]
            v *= self.rho
            v += (1.0 - self.rho) * g * g
            u *= self.momentum
            u += g / np.sqrt(v + self.eps)
            theta -= self.lr * u

    def state_dict(self):
        return {"v": {k: a.copy() for k, a in self.v.items()},
                "u": {k: a.copy() for k, a in self.u.items()}}
