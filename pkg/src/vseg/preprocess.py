"""Fundus preprocessing: green channel, z-score, CLAHE, gamma, min-max.

The full chain (:func:`preprocess_pipeline`) runs, in this fixed order::

    extract_green -> zscore_normalize -> rescale_to_uint8 -> clahe
        -> /255 -> gamma_adjust -> minmax_scale
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError, DataError, DegenerateInputError, ShapeError

log = logging.getLogger(__name__)

STAGES = ("extract_green", "zscore_normalize", "rescale_to_uint8", "clahe",
          "scale_unit", "gamma_adjust", "minmax_scale")


@dataclass(frozen=True)
class NormalizationStats:
    mean: float
    std: float

    @classmethod
    def from_data(cls, images) -> "NormalizationStats":
        """Population mean/std over every pixel of every image, accumulated in float64."""
        n = 0
        total = 0.0
        for im in images:
            a = np.asarray(im, dtype=np.float64)
            n += a.size
            total += a.sum()
        if n == 0:
            raise DataError("no pixels to compute normalization statistics from")
        mean = total / n
        sq = 0.0
        for im in images:
            d = np.asarray(im, dtype=np.float64) - mean
            sq += np.dot(d.ravel(), d.ravel())
        std = float(np.sqrt(sq / n))
        if std == 0.0:
            raise DegenerateInputError("data is constant; standard deviation is zero")
        return cls(float(mean), std)


@dataclass(frozen=True)
class PreprocessParams:
    clahe_tiles: tuple = (8, 8)
    clahe_clip: float = 2.0
    gamma: float = 1.2
    stats_mode: str = "dataset"  # or "image": z-score each image with its own stats

    def __post_init__(self):
        if self.stats_mode not in ("dataset", "image"):
            raise ConfigError(f"stats_mode must be 'dataset' or 'image', got {self.stats_mode!r}")
        if self.gamma <= 0:
            raise ConfigError(f"gamma must be > 0, got {self.gamma}")
        if self.clahe_clip < 1.0:
            raise ConfigError(f"CLAHE clip limit must be >= 1, got {self.clahe_clip}")


@dataclass
class PreprocessedImage:
    values: np.ndarray  # (H, W) float64 in [0, 1]
    manifest: list = field(default_factory=list)  # [(stage, {param: value})] in execution order

    @property
    def shape(self):
        return self.values.shape


def extract_green(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ShapeError(f"expected an (H, W, 3) RGB image, got shape {img.shape}")
    return img[:, :, 1].astype(np.float64)


def zscore_normalize(img: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    if not stats.std > 0:
        raise DegenerateInputError(f"standard deviation must be positive, got {stats.std}")
    return (np.asarray(img, dtype=np.float64) - stats.mean) / stats.std


def rescale_to_uint8(img: np.ndarray) -> np.ndarray:
    """Per-image affine map of the value range onto 0..255, rounded half-up."""
    lo, hi = float(img.min()), float(img.max())
    if hi <= lo:
        raise DegenerateInputError("cannot rescale a constant image to 8 bits")
    return np.floor((img - lo) * (255.0 / (hi - lo)) + 0.5).astype(np.uint8)


def tile_bounds(n: int, tiles: int) -> np.ndarray:
    """``tiles + 1`` integer edges splitting ``range(n)`` into near-equal tiles."""
    return (np.arange(tiles + 1) * n) // tiles


def clahe_tile_map(hist: np.ndarray, clip_limit: float) -> np.ndarray:
    """Equalisation lookup table (float levels 0..255) for one tile histogram."""
    hist = np.asarray(hist, dtype=np.float64)
    n_pix = hist.sum()
    nbins = hist.size
    if np.isfinite(clip_limit):
        limit = clip_limit * n_pix / nbins
        excess = np.maximum(hist - limit, 0.0).sum()
        hist = np.minimum(hist, limit) + excess / nbins
    cdf = np.cumsum(hist)
    cdf_min = cdf[np.argmax(cdf > 0)]
    denom = n_pix - cdf_min
    if denom <= 0:
        return np.arange(nbins, dtype=np.float64)
    lut = np.floor(255.0 * (cdf - cdf_min) / denom + 0.5)
    return np.clip(lut, 0.0, 255.0)


def clahe(img: np.ndarray, tiles=(8, 8), clip_limit: float = 2.0) -> np.ndarray:
    """Contrast-limited adaptive histogram equalisation of an 8-bit image.

    ``clip_limit`` is relative to a flat histogram: bins are capped at
    ``clip_limit * tile_pixels / 256`` and the clipped mass is spread evenly
    over all 256 bins. Output pixels blend the mappings of the four nearest
    tile centres bilinearly; outside the outermost centres the nearest
    mapping is used.
    """
    img = np.asarray(img)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ShapeError(f"CLAHE expects a 2-D uint8 image, got {img.dtype} {img.shape}")
    ty, tx = (int(t) for t in tiles)
    H, W = img.shape
    if ty < 1 or tx < 1 or H < ty or W < tx:
        raise ConfigError(f"image {H}x{W} is smaller than the {ty}x{tx} tile grid")
    if not clip_limit >= 1.0:
        raise ConfigError(f"clip limit must be >= 1, got {clip_limit}")
    yb, xb = tile_bounds(H, ty), tile_bounds(W, tx)
    luts = np.empty((ty, tx, 256), dtype=np.float64)
    for i in range(ty):
        for j in range(tx):
            tile = img[yb[i]:yb[i + 1], xb[j]:xb[j + 1]]
            hist = np.bincount(tile.ravel(), minlength=256)
            luts[i, j] = clahe_tile_map(hist, clip_limit)
    cy = (yb[:-1] + yb[1:] - 1) / 2.0
    cx = (xb[:-1] + xb[1:] - 1) / 2.0
    return kernels.clahe_interpolate(np.ascontiguousarray(img), luts, cy, cx)


def gamma_adjust(img: np.ndarray, gamma: float) -> np.ndarray:
    if gamma <= 0:
        raise ConfigError(f"gamma must be > 0, got {gamma}")
    img = np.asarray(img, dtype=np.float64)
    if img.size and (img.min() < 0 or img.max() > 1):
        raise DataError("gamma adjustment expects values in [0, 1]")
    return np.power(img, gamma)


def minmax_scale(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    lo, hi = img.min(), img.max()
    if hi <= lo:
        raise DegenerateInputError("cannot min-max scale a constant image")
    return (img - lo) / (hi - lo)


def preprocess_pipeline(img: np.ndarray, stats: NormalizationStats | None,
                        params: PreprocessParams = PreprocessParams()) -> PreprocessedImage:
    green = extract_green(img)
    if params.stats_mode == "image" or stats is None:
        if params.stats_mode == "dataset":
            raise ConfigError("dataset normalization statistics are required")
        stats = NormalizationStats.from_data([green])
    manifest = [("extract_green", {"channel": "G"}),
                ("zscore_normalize", {"mean": stats.mean, "std": stats.std, "mode": params.stats_mode})]
    z = zscore_normalize(green, stats)
    q = rescale_to_uint8(z)
    manifest.append(("rescale_to_uint8", {"min": float(z.min()), "max": float(z.max())}))
    c = clahe(q, params.clahe_tiles, params.clahe_clip)
    manifest.append(("clahe", {"tiles": "x".join(map(str, params.clahe_tiles)),
                               "clip_limit": params.clahe_clip, "bins": 256}))
    manifest.append(("scale_unit", {"divisor": 255}))
    g = gamma_adjust(c / 255.0, params.gamma)
    manifest.append(("gamma_adjust", {"gamma": params.gamma}))
    out = minmax_scale(g)
    manifest.append(("minmax_scale", {"min": float(g.min()), "max": float(g.max())}))
    for stage, p in manifest:
        log.debug("preprocess %s %s", stage, p)
    return PreprocessedImage(out, manifest)


def manifest_items(manifest) -> dict:
    """Flatten a stage manifest into ordered ``key=value`` pairs for a sidecar file."""
    items = {"stages": ",".join(stage for stage, _ in manifest)}
    for k, (stage, params) in enumerate(manifest):
        for name, value in params.items():
            items[f"{k}.{stage}.{name}"] = value
    return items


def params_dict(params: PreprocessParams) -> dict:
    d = asdict(params)
    d["clahe_tiles"] = list(params.clahe_tiles)
    return d


def to_network_input(pre: PreprocessedImage) -> np.ndarray:
    """8-bit quantised float32 image, identical to reading the emitted PNG back as ``png / 255``."""
    q = np.floor(np.clip(pre.values, 0.0, 1.0) * 255.0 + 0.5)
    return (q / 255.0).astype(np.float32)
