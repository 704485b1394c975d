"""Reference-based image quality metrics: PSNR and SSIM.

Both operate on grayscale; color images are converted with BT.601 luma
weights first. SSIM follows the canonical defaults (11x11 Gaussian window,
sigma 1.5, k1=0.01, k2=0.03) and averages the local index over valid window
positions only.
"""

from __future__ import annotations

import math

import numpy as np

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


def to_gray(img: np.ndarray) -> np.ndarray:
    """(c,H,W) or (H,W) image to a 2-D grayscale array."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.ndim == 3 and img.shape[0] == 1:
        return img[0]
    if img.ndim == 3 and img.shape[0] == 3:
        w = np.asarray(LUMA_WEIGHTS)
        return np.tensordot(w, img, axes=1)
    raise ValueError(f"expected (H,W), (1,H,W) or (3,H,W), got {img.shape}")


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """10*log10(peak^2 / MSE) in dB; +inf when the images are identical."""
    if peak <= 0:
        raise ValueError("peak must be positive")
    a = to_gray(a)
    b = to_gray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    r = (size - 1) / 2.0
    x = np.arange(size) - r
    g1 = np.exp(-(x**2) / (2.0 * sigma**2))
    g = np.outer(g1, g1)
    return g / g.sum()


def ssim(
    a: np.ndarray,
    b: np.ndarray,
    window: int = 11,
    k1: float = 0.01,
    k2: float = 0.03,
    sigma: float = 1.5,
    peak: float = 1.0,
) -> float:
    """Mean local structural similarity over all fully-inside window positions."""
    if window % 2 == 0 or window < 1:
        raise ValueError(f"window must be odd and positive, got {window}")
    a = to_gray(a)
    b = to_gray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.shape[0] < window or a.shape[1] < window:
        raise ValueError(f"image {a.shape} smaller than window {window}")
    w = _gaussian_window(window, sigma)
    wa = np.lib.stride_tricks.sliding_window_view(a, (window, window))
    wb = np.lib.stride_tricks.sliding_window_view(b, (window, window))
    mu_a = np.tensordot(wa, w, axes=([2, 3], [0, 1]))
    mu_b = np.tensordot(wb, w, axes=([2, 3], [0, 1]))
    ea2 = np.tensordot(wa * wa, w, axes=([2, 3], [0, 1]))
    eb2 = np.tensordot(wb * wb, w, axes=([2, 3], [0, 1]))
    eab = np.tensordot(wa * wb, w, axes=([2, 3], [0, 1]))
    var_a = ea2 - mu_a**2
    var_b = eb2 - mu_b**2
    cov = eab - mu_a * mu_b
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))
