"""Synthetic fundus-like images in the DRIVE directory layout.

Used for smoke tests, demos and benchmarks when the real DRIVE archive is not
available. Images are a bright disc (field of view) with uneven illumination,
noise, and a tree of dark curvilinear vessels; the vessel mask is exact.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .imageio import write_png


def _draw_vessel(mask, rng, y, x, angle, width, length):
    H, W = mask.shape
    yy, xx = np.mgrid[0:H, 0:W]
    for _ in range(length):
        angle += rng.normal(0, 0.15)
        y += np.sin(angle)
        x += np.cos(angle)
        if not (0 <= y < H and 0 <= x < W):
            break
        r = width / 2.0
        y0, y1 = int(max(0, y - r - 1)), int(min(H, y + r + 2))
        x0, x1 = int(max(0, x - r - 1)), int(min(W, x + r + 2))
        d2 = (yy[y0:y1, x0:x1] - y) ** 2 + (xx[y0:y1, x0:x1] - x) ** 2
        mask[y0:y1, x0:x1] |= d2 <= r * r
        if width > 1.2 and rng.random() < 0.02:
            _draw_vessel(mask, rng, y, x, angle + rng.choice([-1, 1]) * rng.uniform(0.4, 1.0),
                         width * 0.7, length // 2)


def make_fundus(height=128, width=128, seed=0, n_vessels=5):
    """Return ``(rgb uint8 (H, W, 3), vessel uint8 {0,1}, fov uint8 {0,1})``."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width]
    cy, cx = (height - 1) / 2, (width - 1) / 2
    rad = 0.48 * min(height, width)
    fov = ((yy - cy) ** 2 + (xx - cx) ** 2 <= rad * rad)
    vessel = np.zeros((height, width), dtype=bool)
    disc = (cy + rng.uniform(-0.1, 0.1) * height, cx + rng.uniform(-0.25, 0.25) * width)
    scale = max(height, width)
    for k in range(n_vessels):
        ang = 2 * np.pi * k / n_vessels + rng.normal(0, 0.3)
        _draw_vessel(vessel, rng, disc[0], disc[1], ang, rng.uniform(2.0, 4.0) * scale / 256 + 1.0,
                     int(scale * 0.6))
    vessel &= fov
    illum = 0.6 + 0.4 * np.exp(-((yy - disc[0]) ** 2 + (xx - disc[1]) ** 2) / (2 * (0.35 * scale) ** 2))
    base = np.stack([170 * illum, 95 * illum, 45 * illum], axis=-1)
    base += rng.normal(0, 6, size=base.shape)
    base[vessel] *= np.array([0.8, 0.55, 0.7])
    base[~fov] = 0
    rgb = np.clip(base + 0.5, 0, 255).astype(np.uint8)
    return rgb, vessel.astype(np.uint8), fov.astype(np.uint8)


def write_drive_like(root, n_train=4, n_test=2, height=128, width=128, seed=0):
    """Write a DRIVE-layout directory tree of synthetic images; returns ``root``."""
    root = Path(root)
    plan = [("training", 21 + i, seed + i) for i in range(n_train)] + \
           [("test", 1 + i, seed + 1000 + i) for i in range(n_test)]
    for split, num, s in plan:
        rgb, vessel, fov = make_fundus(height, width, s)
        tag = "training" if split == "training" else "test"
        write_png(root / split / "images" / f"{num:02d}_{tag}.png", rgb)
        write_png(root / split / "1st_manual" / f"{num:02d}_manual1.png", vessel * 255)
        write_png(root / split / "mask" / f"{num:02d}_{tag}_mask.png", fov * 255)
    return root
