"""Image-quality and variance-estimation metrics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


def psnr(x: np.ndarray, xhat: np.ndarray, peak: float = 1.0) -> float:
    """``10 log10(peak^2 / MSE)``; identical images give ``inf``."""
    x = np.asarray(x, np.float64)
    xhat = np.asarray(xhat, np.float64)
    if x.shape != xhat.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {xhat.shape}")
    mse = float(np.mean((x - xhat) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(peak ** 2 / mse))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    t = np.arange(size) - (size - 1) / 2
    g = np.exp(-t ** 2 / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    # separable weighted window sums over every fully contained window
    k = g.size
    rows = sliding_window_view(img, k, axis=0) @ g
    return sliding_window_view(rows, k, axis=1) @ g


def ssim(x: np.ndarray, xhat: np.ndarray, peak: float = 1.0,
         window: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> float:
    """Single-scale SSIM with a Gaussian window, averaged over all windows
    that fit inside the image (no padding)."""
    x = np.asarray(x, np.float64)
    xhat = np.asarray(xhat, np.float64)
    if x.shape != xhat.shape or x.ndim != 2:
        raise ValueError(f"ssim needs two grayscale images of equal shape, got {x.shape} and {xhat.shape}")
    if min(x.shape) < window:
        raise ValueError(f"image {x.shape} is smaller than the {window}x{window} window")
    g = gaussian_window(window, sigma)
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    mx = _filter_valid(x, g)
    my = _filter_valid(xhat, g)
    sxx = _filter_valid(x * x, g) - mx * mx
    syy = _filter_valid(xhat * xhat, g) - my * my
    sxy = _filter_valid(x * xhat, g) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


@dataclass(frozen=True)
class VarianceMetrics:
    relative_error: float
    mae: float
    rmae: float


def variance_metrics(v_est, v_gt) -> VarianceMetrics:
    """Variance-estimate errors over intensity levels (or a single constant).

    ``relative_error = (sum v_est - sum v_gt) / sum v_gt``, which for a scalar
    pair is ``(est - gt) / gt``; ``MAE = sum |v_est - v_gt|`` and
    ``RMAE = MAE / sum v_gt``. Values are fractions, not percentages.
    """
    v_est = np.atleast_1d(np.asarray(v_est, np.float64))
    v_gt = np.atleast_1d(np.asarray(v_gt, np.float64))
    if v_est.shape != v_gt.shape:
        raise ValueError(f"shape mismatch: {v_est.shape} vs {v_gt.shape}")
    total = float(v_gt.sum())
    if total == 0.0:
        raise ValueError("ground-truth variance sums to zero")
    mae = float(np.abs(v_est - v_gt).sum())
    return VarianceMetrics(float(v_est.sum() - total) / total, mae, mae / total)
