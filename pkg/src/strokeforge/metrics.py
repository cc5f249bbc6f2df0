"""Image fidelity metrics on [0, 1] RGB images."""

from __future__ import annotations

import math

import numpy as np
from skimage.metrics import structural_similarity

# reported for identical images; JSON has no infinity
PSNR_IDENTICAL = float("inf")

_LUMA = np.array([0.299, 0.587, 0.114])


def _check(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    a, b = _check(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_IDENTICAL
    return 10.0 * math.log10(1.0 / mse)


def luminance(img):
    img = np.asarray(img, dtype=np.float64)
    return img @ _LUMA if img.ndim == 3 else img


def ssim(a, b) -> float:
    """Single-scale SSIM on luminance: 11x11 Gaussian window (sigma 1.5), K1 0.01, K2 0.03."""
    a, b = _check(a, b)
    if min(a.shape[:2]) < 11:
        raise ValueError("SSIM needs images of at least 11x11 pixels")
    return float(structural_similarity(luminance(a), luminance(b), data_range=1.0,
                                       gaussian_weights=True, sigma=1.5, use_sample_covariance=False,
                                       K1=0.01, K2=0.03))


def json_number(x: float):
    """Finite floats pass through; infinities become the strings "inf"/"-inf"."""
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x
