"""Synthetic CT-like slices for desk-scale runs when no real pristine data is at hand."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .imageio import save_image


def synthetic_slice(seed: int, size: int = 128) -> np.ndarray:
    """A grayscale phantom in [0, 1]: body ellipse, organ-like blobs, soft tissue texture."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[-1:1:size * 1j, -1:1:size * 1j]
    img = np.zeros((size, size))

    def ellipse(cx, cy, ax, ay, theta):
        c, s = np.cos(theta), np.sin(theta)
        u, v = (xx - cx) * c + (yy - cy) * s, -(xx - cx) * s + (yy - cy) * c
        return (u / ax) ** 2 + (v / ay) ** 2 <= 1.0

    body = ellipse(0, 0, rng.uniform(0.75, 0.9), rng.uniform(0.6, 0.8), rng.uniform(-0.2, 0.2))
    img[body] = 0.35
    for _ in range(rng.integers(4, 8)):
        blob = ellipse(rng.uniform(-0.5, 0.5), rng.uniform(-0.4, 0.4), rng.uniform(0.05, 0.3),
                       rng.uniform(0.05, 0.25), rng.uniform(0, np.pi)) & body
        img[blob] = rng.uniform(0.1, 0.9)
    texture = gaussian_filter(rng.normal(size=(size, size)), sigma=size / 32)
    img = gaussian_filter(img, 1.0) + 0.05 * texture / (np.abs(texture).max() + 1e-12) * body
    return np.clip(img, 0.0, 1.0)


def write_phantom_set(out_dir, n_patients: int = 4, n_slices: int = 1, size: int = 128, seed: int = 0) -> list:
    """Write ``{patient}_{slice}.png`` phantoms; returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for p in range(n_patients):
        for s in range(n_slices):
            path = out_dir / f"P{p:03d}_S{s:02d}.png"
            save_image(synthetic_slice(seed * 100003 + p * 101 + s, size), path)
            paths.append(path)
    return paths
