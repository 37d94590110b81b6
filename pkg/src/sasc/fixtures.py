"""Deterministic synthetic test images.

Five self-repetitive textures exercise the nonlocal prior (repeat periods fit
inside the default 31-pixel search window) and one piecewise-smooth scene
stands in for natural content.  All generators are pure functions of their
arguments.
"""

from __future__ import annotations

import numpy as np

from .ops import gaussian_kernel, periodic_convolve

TEXTURE_COUNT = 5


def _coords(size: int) -> tuple[np.ndarray, np.ndarray]:
    idx = np.arange(size)
    return np.meshgrid(idx, idx, indexing="ij")


def _to_range(img: np.ndarray, lo: float = 0.08, hi: float = 0.92) -> np.ndarray:
    mn, mx = img.min(), img.max()
    if mx == mn:
        return np.full_like(img, (lo + hi) / 2.0)
    return lo + (hi - lo) * (img - mn) / (mx - mn)


def texture(index: int, size: int = 128) -> np.ndarray:
    """One of five periodic textures; repeats sit well inside a 31px window."""
    if not 0 <= index < TEXTURE_COUNT:
        raise ValueError(f"texture index must be in [0, {TEXTURE_COUNT}), got {index}")
    if size < 32:
        raise ValueError(f"texture size must be >= 32, got {size}")
    rr, cc = _coords(size)
    if index == 0:
        # tiled random block, period 8
        rng = np.random.default_rng(100)
        tile = rng.random((8, 8))
        reps = size // 8 + 1
        img = np.tile(tile, (reps, reps))[:size, :size]
        img = periodic_convolve(img, gaussian_kernel(0.6))
    elif index == 1:
        # oblique stripes, wavelength 8 along the normal
        phase = 2.0 * np.pi * (0.6 * rr + 0.8 * cc) / 8.0
        img = 0.5 + 0.5 * np.sin(phase)
    elif index == 2:
        # soft checkerboard, period 12
        img = ((rr // 6 + cc // 6) % 2).astype(np.float64)
        img = periodic_convolve(img, gaussian_kernel(1.0))
    elif index == 3:
        # brick courses: 6px rows, 12px bricks, half offset per course
        row = rr // 6
        shift = (row % 2) * 6
        mortar_v = ((cc + shift) % 12) < 1
        mortar_h = (rr % 6) < 1
        img = np.where(mortar_v | mortar_h, 0.2, 0.8)
        img = periodic_convolve(img, gaussian_kernel(0.5))
    else:
        # plain weave, period 8
        img = np.sin(2.0 * np.pi * rr / 8.0) * np.sin(2.0 * np.pi * cc / 8.0)
        img = 0.5 + 0.35 * img + 0.15 * np.sin(2.0 * np.pi * (rr + cc) / 8.0)
    return _to_range(img)


def pseudo_natural(size: int = 128, seed: int = 7) -> np.ndarray:
    """Piecewise-smooth scene: shaded background, a few hard-edged shapes,
    one lightly textured region."""
    if size < 32:
        raise ValueError(f"image size must be >= 32, got {size}")
    rng = np.random.default_rng(seed)
    rr, cc = _coords(size)
    u = rr / size
    v = cc / size

    # large-scale shading
    img = 0.45 + 0.25 * np.sin(2.1 * u + 0.7) * np.cos(1.7 * v - 0.4)

    # hard-edged shapes with interior shading
    for _ in range(3):
        cy, cx = rng.uniform(0.2, 0.8, size=2)
        ry = rng.uniform(0.08, 0.22)
        rx = rng.uniform(0.08, 0.22)
        level = rng.uniform(0.15, 0.85)
        mask = ((u - cy) / ry) ** 2 + ((v - cx) / rx) ** 2 <= 1.0
        img = np.where(mask, level + 0.1 * (u - cy), img)

    # one shallow texture patch in a corner band
    band = (u > 0.62) & (v < 0.45)
    stripes = 0.05 * np.sin(2.0 * np.pi * (rr + 2 * cc) / 9.0)
    img = img + np.where(band, stripes, 0.0)

    img = periodic_convolve(img, gaussian_kernel(0.7))
    return _to_range(img, 0.05, 0.95)
