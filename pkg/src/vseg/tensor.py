"""Dense tensor helpers on top of ``numpy.ndarray``.

Tensors are plain C-contiguous ndarrays; this module adds the checked
constructors, row-major index arithmetic and seeded initialisation the rest
of the package relies on. The random generator is numpy's PCG64
(``numpy.random.Generator(PCG64(seed))``); streams are bit-identical for a
given seed and numpy major version.
"""
from __future__ import annotations

import operator

import numpy as np

from .errors import ShapeError

Rng = np.random.Generator

_OPS = {"add": operator.add, "sub": operator.sub, "mul": operator.mul}


def make_rng(seed: int) -> Rng:
    """PCG64 generator seeded with a 64-bit unsigned integer."""
    if not 0 <= int(seed) < 2**64:
        raise ValueError(f"seed must fit in 64 unsigned bits, got {seed}")
    return np.random.Generator(np.random.PCG64(int(seed)))


def check_shape(shape) -> tuple[int, ...]:
    shape = tuple(int(d) for d in shape)
    if not shape:
        raise ShapeError("shape must have at least one dimension")
    if any(d < 1 for d in shape):
        raise ShapeError(f"all dimensions must be >= 1, got {shape}")
    return shape


def zeros(shape, dtype=np.float64) -> np.ndarray:
    return np.zeros(check_shape(shape), dtype=dtype)


def elementwise(op: str, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``op`` is one of add, sub, mul. No broadcasting: shapes must match."""
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    try:
        fn = _OPS[op]
    except KeyError:
        raise ValueError(f"unknown op {op!r}; expected one of {sorted(_OPS)}") from None
    return fn(a, b)


def reshape(t: np.ndarray, shape) -> np.ndarray:
    shape = check_shape(shape)
    if int(np.prod(shape)) != t.size:
        raise ShapeError(f"cannot reshape {t.shape} to {shape}")
    return np.ascontiguousarray(t).reshape(shape)


def strides_of(shape) -> tuple[int, ...]:
    """Row-major element strides."""
    shape = check_shape(shape)
    out = [1] * len(shape)
    for k in range(len(shape) - 2, -1, -1):
        out[k] = out[k + 1] * shape[k + 1]
    return tuple(out)


def offset_of(index, shape) -> int:
    shape = check_shape(shape)
    if len(index) != len(shape) or any(not 0 <= i < d for i, d in zip(index, shape)):
        raise ShapeError(f"index {tuple(index)} out of bounds for {shape}")
    return sum(i * s for i, s in zip(index, strides_of(shape)))


def index_of(offset: int, shape) -> tuple[int, ...]:
    shape = check_shape(shape)
    if not 0 <= offset < int(np.prod(shape)):
        raise ShapeError(f"offset {offset} out of bounds for {shape}")
    idx = []
    for s in strides_of(shape):
        q, offset = divmod(offset, s)
        idx.append(q)
    return tuple(idx)


def he_init(shape, fan_in: int, rng: Rng, dtype=np.float64) -> np.ndarray:
    """Normal(0, sqrt(2/fan_in)) samples; always drawn in float64 then cast."""
    shape = check_shape(shape)
    if fan_in < 1:
        raise ValueError(f"fan_in must be >= 1, got {fan_in}")
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)
