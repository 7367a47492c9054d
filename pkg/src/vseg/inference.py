"""Whole-image segmentation by stitching overlapping patch predictions."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .dataset import PATCH
from .errors import ConfigError, DataError, StateError


@dataclass
class ProbabilityMap:
    prob: np.ndarray      # (H, W) float64 in [0, 1]
    coverage: np.ndarray  # (H, W) int64, patches covering each pixel


@dataclass
class BinarySegmentation:
    mask: np.ndarray  # (H, W) uint8 in {0, 1}
    threshold: float


def grid_origins(n: int, stride: int, size: int = PATCH) -> np.ndarray:
    """Origins ``0, stride, 2*stride, ...`` plus a final origin snapped to ``n - size``."""
    last = n - size
    origins = list(range(0, last + 1, stride))
    if origins[-1] != last:
        origins.append(last)
    return np.asarray(origins, dtype=np.int64)


def _logit(p, eps=1e-7):
    p = np.clip(p, eps, 1 - eps)
    return np.log(p) - np.log1p(-p)


def predict_image(net, image: np.ndarray, stride: int = 7, fov: np.ndarray | None = None,
                  aggregate: str = "prob", chunk: int = 256) -> ProbabilityMap:
    """Tile ``image`` with 28x28 windows and average the per-pixel predictions.

    ``net.forward`` must map ``(B, 1, 28, 28)`` to ``(B, 28, 28)`` probabilities
    and the network must be in eval mode. ``aggregate="logit"`` averages in
    logit space instead of probability space. Pixels outside ``fov`` are set
    to 0 in the returned map.
    """
    if not 1 <= stride <= PATCH:
        raise ConfigError(f"stride must be in [1, {PATCH}], got {stride}")
    if aggregate not in ("prob", "logit"):
        raise ConfigError(f"aggregate must be 'prob' or 'logit', got {aggregate!r}")
    if getattr(net, "training", False):
        raise StateError("predict_image requires the network in eval mode")
    image = np.asarray(image)
    H, W = image.shape
    if H < PATCH or W < PATCH:
        raise DataError(f"image {H}x{W} is smaller than the {PATCH}x{PATCH} patch")
    oy, ox = grid_origins(H, stride), grid_origins(W, stride)
    OY, OX = (a.ravel() for a in np.meshgrid(oy, ox, indexing="ij"))
    acc = np.zeros((H, W), dtype=np.float64)
    cnt = np.zeros((H, W), dtype=np.int64)
    src = image.astype(np.float32)
    for s in range(0, len(OY), chunk):
        y, x = OY[s:s + chunk], OX[s:s + chunk]
        batch = np.stack([src[a:a + PATCH, b:b + PATCH] for a, b in zip(y, x)])[:, None]
        preds = np.asarray(net.forward(batch), dtype=np.float64)
        if aggregate == "logit":
            preds = _logit(preds)
        kernels.stitch_accumulate(acc, cnt, np.ascontiguousarray(preds), y, x)
    if cnt.min() < 1:
        raise AssertionError("stitching left uncovered pixels")
    prob = acc / cnt
    if aggregate == "logit":
        prob = 1.0 / (1.0 + np.exp(-prob))
    if fov is not None:
        prob = np.where(fov.astype(bool), prob, 0.0)
    return ProbabilityMap(prob, cnt)


def binarize(pmap, threshold: float = 0.5) -> BinarySegmentation:
    """Vessel iff probability >= threshold."""
    if not 0.0 < threshold < 1.0:
        raise ConfigError(f"threshold must be in (0, 1), got {threshold}")
    prob = pmap.prob if isinstance(pmap, ProbabilityMap) else np.asarray(pmap)
    return BinarySegmentation((prob >= threshold).astype(np.uint8), threshold)
