"""DRIVE ingestion and 28x28 patch sampling.

Expected layout (the DRIVE archive's own layout)::

    ROOT/training/images/21_training.<ext>     RGB fundus image
    ROOT/training/1st_manual/21_manual1.<ext>  vessel ground truth
    ROOT/training/mask/21_training_mask.<ext>  field-of-view mask
    ROOT/test/...                               same, ids 01..20

Records are matched across the three folders by the leading number of each
filename. Any raster format Pillow can decode is accepted.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, IngestionError, ShapeError
from .imageio import read_image
from .tensor import Rng

PATCH = 28
HALF = PATCH // 2
SPLITS = ("training", "test")
IMAGE_EXTS = {".png", ".ppm", ".pgm", ".pnm", ".tif", ".tiff", ".gif", ".bmp", ".jpg", ".jpeg"}
_ID = re.compile(r"^(\d+)")


@dataclass
class DriveRecord:
    id: str
    split: str
    image: np.ndarray   # (H, W, 3) uint8
    vessel: np.ndarray  # (H, W) uint8 in {0, 1}
    fov: np.ndarray     # (H, W) uint8 in {0, 1}
    prep: np.ndarray | None = field(default=None, repr=False)  # preprocessed (H, W) float

    @property
    def shape(self):
        return self.vessel.shape


def binarize_mask(mask: np.ndarray, threshold: int = 128) -> np.ndarray:
    if mask.ndim == 3:
        mask = mask.max(axis=2)
    return (mask >= threshold).astype(np.uint8)


def _index_folder(folder: Path) -> dict:
    if not folder.is_dir():
        raise IngestionError(f"missing directory: {folder}")
    found = {}
    for p in sorted(folder.iterdir()):
        m = _ID.match(p.name)
        if m and p.suffix.lower() in IMAGE_EXTS:
            found.setdefault(str(int(m.group(1))).zfill(2), p)
    return found


def load_split(root, split: str) -> list[DriveRecord]:
    base = Path(root) / split
    images = _index_folder(base / "images")
    manual = _index_folder(base / "1st_manual")
    masks = _index_folder(base / "mask")
    if not images:
        raise IngestionError(f"no images found in {base / 'images'}")
    records = []
    for rid, img_path in sorted(images.items()):
        for name, table, folder in (("vessel", manual, "1st_manual"), ("fov", masks, "mask")):
            if rid not in table:
                raise IngestionError(f"missing {name} file for image {img_path.name} in {base / folder}")
        img = read_image(img_path)
        if img.ndim == 2:
            img = np.repeat(img[:, :, None], 3, axis=2)
        vessel = binarize_mask(read_image(manual[rid]))
        fov = binarize_mask(read_image(masks[rid]))
        if vessel.shape != img.shape[:2] or fov.shape != img.shape[:2]:
            raise DataError(f"record {split}/{rid}: image {img.shape[:2]}, vessel mask {vessel.shape}, "
                            f"FOV mask {fov.shape} differ")
        records.append(DriveRecord(rid, split, img, vessel, fov))
    return records


def load_drive(root, splits=SPLITS) -> list[DriveRecord]:
    root = Path(root)
    if not root.is_dir():
        raise IngestionError(f"missing dataset root: {root}")
    out = []
    for split in splits:
        out.extend(load_split(root, split))
    return out


@dataclass
class PatchSet:
    """Sampled patch/label pairs plus where each came from."""
    patches: np.ndarray   # (n, 1, 28, 28) float32
    labels: np.ndarray    # (n, 28, 28) uint8
    record: np.ndarray    # (n,) index into the source record list
    cy: np.ndarray        # (n,) centre row; window rows cy-14 .. cy+13
    cx: np.ndarray        # (n,) centre column

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, i):
        return self.patches[i], self.labels[i]

    def subset(self, idx) -> "PatchSet":
        return PatchSet(self.patches[idx], self.labels[idx], self.record[idx], self.cy[idx], self.cx[idx])


def valid_centers(shape, fov: np.ndarray | None = None) -> np.ndarray:
    """Boolean map of centres whose whole window is in bounds (and inside ``fov`` if given)."""
    H, W = shape
    ok = np.zeros((H, W), dtype=bool)
    if H >= PATCH and W >= PATCH:
        ok[HALF:H - HALF + 1, HALF:W - HALF + 1] = True
    if fov is not None:
        ok &= fov.astype(bool)
    return ok


def window(arr: np.ndarray, cy: int, cx: int) -> np.ndarray:
    return arr[cy - HALF:cy + HALF, cx - HALF:cx + HALF]


def sample_patches(records, n: int, rng: Rng, use_fov: bool = True, dtype=np.float32) -> PatchSet:
    """Draw ``n`` windows uniformly (with replacement) over all valid centres of all records."""
    if n < 1:
        raise ValueError(f"patch count must be >= 1, got {n}")
    flat = []
    for r in records:
        if r.prep is None:
            raise DataError(f"record {r.split}/{r.id} has not been preprocessed")
        if r.prep.shape != r.shape:
            raise ShapeError(f"record {r.split}/{r.id}: preprocessed shape {r.prep.shape} != {r.shape}")
        flat.append(np.flatnonzero(valid_centers(r.shape, r.fov if use_fov else None)))
    counts = np.array([len(f) for f in flat], dtype=np.int64)
    total = int(counts.sum())
    if total == 0:
        raise DataError("no valid patch centres in the given records")
    draws = rng.integers(0, total, size=n)
    rec = np.searchsorted(np.cumsum(counts), draws, side="right")
    start = np.concatenate([[0], np.cumsum(counts)[:-1]])
    patches = np.empty((n, 1, PATCH, PATCH), dtype=dtype)
    labels = np.empty((n, PATCH, PATCH), dtype=np.uint8)
    cy = np.empty(n, dtype=np.int64)
    cx = np.empty(n, dtype=np.int64)
    for k in range(n):
        r = records[rec[k]]
        pix = flat[rec[k]][draws[k] - start[rec[k]]]
        cy[k], cx[k] = divmod(int(pix), r.shape[1])
        patches[k, 0] = window(r.prep, cy[k], cx[k])
        labels[k] = window(r.vessel, cy[k], cx[k])
    return PatchSet(patches, labels, rec.astype(np.int64), cy, cx)


def train_val_split(patches: PatchSet, val_fraction: float, rng: Rng):
    if not 0.0 <= val_fraction < 1.0:
        raise ValueError(f"val_fraction must be in [0, 1), got {val_fraction}")
    n = len(patches)
    n_val = int(round(val_fraction * n))
    perm = rng.permutation(n)
    return patches.subset(np.sort(perm[n_val:])), patches.subset(np.sort(perm[:n_val]))
