"""Full-reference image quality metrics: MSE, PSNR and Gaussian-window SSIM."""

from __future__ import annotations

import math

import numpy as np
from scipy.ndimage import correlate1d

from .geometry import Image

SSIM_RADIUS = 5
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = a.data if isinstance(a, Image) else np.asarray(a, dtype=np.float64)
    b = b.data if isinstance(b, Image) else np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def mse_metric(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b, peak: float = 1.0) -> float:
    """PSNR in dB; identical images give ``inf``."""
    err = mse_metric(a, b)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(peak**2 / err)


def gaussian_window(radius: int = SSIM_RADIUS, sigma: float = SSIM_SIGMA) -> np.ndarray:
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    w = np.exp(-(t**2) / (2.0 * sigma**2))
    return w / w.sum()


def _local_mean(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    r = (w.size - 1) // 2
    out = correlate1d(correlate1d(x, w, axis=0, mode="constant"), w, axis=1, mode="constant")
    # keep only windows that lie fully inside the image
    return out[r:-r, r:-r]


def ssim_map(a, b, data_range: float = 1.0) -> np.ndarray:
    """Local SSIM over every fully contained 11x11 Gaussian window."""
    a, b = _pair(a, b)
    w = gaussian_window()
    if min(a.shape) < w.size:
        raise ValueError(f"images must be at least {w.size}x{w.size} for SSIM")
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_a = _local_mean(a, w)
    mu_b = _local_mean(b, w)
    var_a = _local_mean(a * a, w) - mu_a * mu_a
    var_b = _local_mean(b * b, w) - mu_b * mu_b
    cov = _local_mean(a * b, w) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a, b, data_range: float = 1.0) -> float:
    return float(np.mean(ssim_map(a, b, data_range)))
