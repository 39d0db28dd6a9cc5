"""PSNR and SSIM for grayscale images in [0, 1]."""

from __future__ import annotations

import numpy as np
from scipy.ndimage import correlate1d

from ._validation import check_image, check_same_shape

K1 = 0.01
K2 = 0.03
WIN_SIZE = 11
WIN_SIGMA = 1.5


def psnr(a, b, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical images."""
    a = check_image(a, "a")
    b = check_image(b, "b")
    check_same_shape(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(peak * peak / mse))


def _gaussian_window(size: int = WIN_SIZE, sigma: float = WIN_SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    w = np.exp(-0.5 * (x / sigma) ** 2)
    return w / w.sum()


def _filter_valid(img: np.ndarray, w: np.ndarray) -> np.ndarray:
    pad = (len(w) - 1) // 2
    out = correlate1d(img, w, axis=0, mode="constant")
    out = correlate1d(out, w, axis=1, mode="constant")
    return out[pad:-pad, pad:-pad]


def ssim(a, b, data_range: float = 1.0) -> float:
    """Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5).

    Local statistics use population (biased) variances; the result is the mean
    SSIM map over pixels whose window lies fully inside the image.
    """
    a = check_image(a, "a")
    b = check_image(b, "b")
    check_same_shape(a, b)
    if min(a.shape) < WIN_SIZE:
        raise ValueError(f"images must be at least {WIN_SIZE}x{WIN_SIZE} for SSIM")
    if np.array_equal(a, b):
        return 1.0
    w = _gaussian_window()
    mu_a = _filter_valid(a, w)
    mu_b = _filter_valid(b, w)
    var_a = _filter_valid(a * a, w) - mu_a * mu_a
    var_b = _filter_valid(b * b, w) - mu_b * mu_b
    cov = _filter_valid(a * b, w) - mu_a * mu_b
    c1 = (K1 * data_range) ** 2
    c2 = (K2 * data_range) ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def evaluate(a, b) -> dict:
    """PSNR (dB) and SSIM (unit scale) of one image pair."""
    return {"psnr": psnr(a, b), "ssim": ssim(a, b)}
