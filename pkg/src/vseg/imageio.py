"""Image and raw-map file I/O.

Raster images are read and written through Pillow (PNG, binary PPM/PGM, and
anything else Pillow decodes). Probability maps can also be stored raw as
``VMAP`` files: a 16-byte little-endian header (magic ``b"VMAP"``, u32
version, u32 height, u32 width) followed by ``height*width`` float32 values
in row-major order.
"""
from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import FormatError, IngestionError, UnsupportedVersionError

VMAP_MAGIC = b"VMAP"
VMAP_VERSION = 1
_VMAP_HEADER = struct.Struct("<4sIII")


def read_image(path) -> np.ndarray:
    """Return ``(H, W)`` uint8 for grayscale/palette data or ``(H, W, 3)`` for colour."""
    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"missing image file: {path}")
    try:
        with Image.open(path) as im:
            if im.mode in ("RGB", "RGBA", "CMYK", "YCbCr"):
                return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
            if im.mode == "P":
                im = im.convert("RGB") if _palette_is_colour(im) else im.convert("L")
                return np.asarray(im, dtype=np.uint8).copy()
            if im.mode in ("I;16", "I;16B", "I"):
                a = np.asarray(im, dtype=np.float64)
                return np.clip(a / 256.0, 0, 255).astype(np.uint8)
            return np.asarray(im.convert("L"), dtype=np.uint8).copy()
    except OSError as exc:
        raise IngestionError(f"cannot decode image {path}: {exc}") from exc


def _palette_is_colour(im):
    rgb = np.asarray(im.convert("RGB"))
    return not (np.array_equal(rgb[..., 0], rgb[..., 1]) and np.array_equal(rgb[..., 1], rgb[..., 2]))


def write_png(path, arr: np.ndarray):
    arr = np.asarray(arr)
    if arr.dtype != np.uint8:
        raise TypeError(f"write_png expects uint8 data, got {arr.dtype}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path, format="PNG")


def to_uint8(values: np.ndarray) -> np.ndarray:
    """Quantise [0, 1] floats as ``round(255 * v)``."""
    return np.floor(np.clip(values, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_vmap(path, prob: np.ndarray):
    prob = np.asarray(prob, dtype="<f4")
    if prob.ndim != 2:
        raise ValueError("VMAP holds a single 2-D map")
    h, w = prob.shape
    with open(path, "wb") as fh:
        fh.write(_VMAP_HEADER.pack(VMAP_MAGIC, VMAP_VERSION, h, w))
        fh.write(np.ascontiguousarray(prob).tobytes())


def read_vmap(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _VMAP_HEADER.size:
        raise FormatError(f"{path}: truncated VMAP header")
    magic, version, h, w = _VMAP_HEADER.unpack_from(data)
    if magic != VMAP_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version > VMAP_VERSION:
        raise UnsupportedVersionError(f"{path}: VMAP version {version} is newer than supported {VMAP_VERSION}")
    body = data[_VMAP_HEADER.size:]
    if len(body) != 4 * h * w:
        raise FormatError(f"{path}: expected {4 * h * w} payload bytes, found {len(body)}")
    return np.frombuffer(body, dtype="<f4").reshape(h, w).copy()


def write_kv(path, items: dict):
    """Write a flat ``key=value`` text file atomically."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        for k, v in items.items():
            fh.write(f"{k}={v}\n")
    os.replace(tmp, path)


def read_kv(path) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise FormatError(f"{path}:{lineno}: expected key=value, got {raw.rstrip()!r}")
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out
