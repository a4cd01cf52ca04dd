"""Synthetic parking-space crops for smoke tests and desk-scale experiments.

"Empty" crops are a tinted flat background with pixel noise. "Occupied"
crops add one compact bright blob at a random position. The blob is
small relative to the crop, so a ``k x k`` camera with coarse pixel
spacing can miss it entirely, which is the failure mode at very low
resolutions.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .dataset import Label, Manifest, Sample
from .imaging import Image, write_image

# Presets. SWEEP: small blobs that coarse cameras can miss. SMOKE: large
# blobs on a narrow background range, separable almost from initialization.
SWEEP = {"radius": (5.5, 7.0), "base": (0.25, 0.55)}
SMOKE = {"radius": (12.0, 18.0), "base": (0.3, 0.4)}


def make_crop(rng: np.random.Generator, occupied: bool, side: int = 50,
              radius=(5.5, 7.0), noise: float = 0.04, base=(0.25, 0.55)) -> Image:
    """One crop; ``radius`` and ``base`` are ranges for blob size and background level."""
    base = rng.uniform(*base)
    tint = rng.uniform(-0.03, 0.03, size=3)
    img = np.full((side, side, 3), base, dtype=np.float64) + tint
    if occupied:
        r = rng.uniform(*radius)
        cy, cx = rng.uniform(r, side - 1 - r, size=2)
        yy, xx = np.mgrid[0:side, 0:side]
        d2 = ((yy - cy) ** 2 + (xx - cx) ** 2) / r ** 2
        img += rng.uniform(0.3, 0.45) * np.clip(1.5 - d2, 0, 1)[:, :, None]
    img += rng.normal(0, noise, size=img.shape)
    img = np.round(np.clip(img, 0, 1) * 255) / 255
    return Image(img.astype(np.float32))


def write_dataset(root, n: int, seed: int = 0, side: int = 50, **kwargs) -> Manifest:
    """Write ``n`` balanced crops as PPM files in an ``Empty``/``Occupied`` tree."""
    root = Path(root)
    rng = np.random.default_rng(seed)
    for name in ("Empty", "Occupied"):
        (root / name).mkdir(parents=True, exist_ok=True)
    samples = []
    for i in range(n):
        occupied = i % 2 == 1
        folder = "Occupied" if occupied else "Empty"
        path = root / folder / f"{i:05d}.ppm"
        write_image(make_crop(rng, occupied, side, **kwargs), path)
        samples.append(Sample(str(path), Label(int(occupied)), root.name))
    return Manifest(sorted(samples, key=lambda s: s.path), root.name)
