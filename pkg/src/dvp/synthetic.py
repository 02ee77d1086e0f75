"""Piecewise-smooth synthetic grayscale images for desk-scale experiments."""
from __future__ import annotations

import numpy as np


def synthetic_image(size: int, rng: np.random.Generator, shapes: int = 12) -> np.ndarray:
    """A ``size x size`` image in [0.05, 0.95]: a smooth background gradient,
    overlapping flat or shaded ellipses and rectangles, and a faint texture."""
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    gx, gy = rng.uniform(-0.3, 0.3, size=2)
    img = rng.uniform(0.3, 0.7) + gx * (xx - 0.5) + gy * (yy - 0.5)
    for _ in range(shapes):
        cx, cy = rng.uniform(0, 1, size=2)
        level = rng.uniform(0.05, 0.95)
        shade = rng.uniform(-0.2, 0.2, size=2) * (rng.uniform() < 0.5)
        fill = level + shade[0] * (xx - cx) + shade[1] * (yy - cy)
        if rng.uniform() < 0.5:
            a, b = rng.uniform(0.05, 0.3, size=2)
            th = rng.uniform(0, np.pi)
            u = (xx - cx) * np.cos(th) + (yy - cy) * np.sin(th)
            v = -(xx - cx) * np.sin(th) + (yy - cy) * np.cos(th)
            inside = (u / a) ** 2 + (v / b) ** 2 <= 1
        else:
            w, h = rng.uniform(0.05, 0.4, size=2)
            inside = (np.abs(xx - cx) <= w / 2) & (np.abs(yy - cy) <= h / 2)
        img = np.where(inside, fill, img)
    f1, f2 = rng.uniform(2, 8, size=2)
    img = img + 0.03 * np.sin(2 * np.pi * (f1 * xx + rng.uniform())) * np.sin(2 * np.pi * (f2 * yy + rng.uniform()))
    return np.clip(img, 0.05, 0.95)


def synthetic_set(count: int, size: int, seed: int) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    return [synthetic_image(size, rng) for _ in range(count)]
