"""Overlap and fidelity metrics: DSC, IoU, PSNR, SSIM.

All metrics are computed in float64 on unquantised images.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .diffcore import ShapeError

PSNR_CAP = 99.0


def _check(a, b):
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ShapeError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def dsc(a, b, k: int = 1) -> float:
    """Dice coefficient of class ``k`` in two label maps (1 if both lack it)."""
    a, b = _check(a, b)
    ma, mb = a == k, b == k
    denom = int(ma.sum()) + int(mb.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int(np.logical_and(ma, mb).sum()) / denom


def iou(a, b, k: int = 1) -> float:
    a, b = _check(a, b)
    ma, mb = a == k, b == k
    union = int(np.logical_or(ma, mb).sum())
    if union == 0:
        return 1.0
    return int(np.logical_and(ma, mb).sum()) / union


def mean_foreground(metric, a, b, n_classes: int) -> float:
    """Average of ``metric`` over classes 1..n_classes-1."""
    return float(np.mean([metric(a, b, k) for k in range(1, n_classes)]))


def psnr(x, y, max_val: float = 1.0) -> float:
    x, y = _check(x, y)
    err = np.mean((x.astype(np.float64) - y.astype(np.float64)) ** 2)
    if err == 0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(max_val ** 2 / err)))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(r ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = len(g)
    rows = sliding_window_view(img, k, axis=0) @ g
    return sliding_window_view(rows, k, axis=1) @ g


def ssim(x, y, data_range: float = 1.0, window: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean SSIM over all fully-covered positions of a Gaussian window.

    Images smaller than the window use the largest odd window that fits.
    """
    x, y = _check(x, y)
    if x.ndim != 2:
        raise ShapeError(f"ssim expects 2-D images, got {x.shape}")
    x = x.astype(np.float64)
    y = y.astype(np.float64)
    size = min(window, *x.shape)
    size -= 1 - size % 2
    g = gaussian_window(size, sigma)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    mx, my = _filter_valid(x, g), _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mx * mx
    syy = _filter_valid(y * y, g) - my * my
    sxy = _filter_valid(x * y, g) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))
