"""Structural similarity on luma with the standard Gaussian-window statistics.

Images are converted to BT.601 luma; local means/variances/covariance come
from an 11x11 Gaussian window (sigma 1.5), normalized weights, restricted to
fully valid window positions; stabilizers C1=(0.01*255)^2, C2=(0.03*255)^2.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import correlate1d

WINDOW_SIZE = 11
SIGMA = 1.5
K1 = 0.01
K2 = 0.03
DATA_RANGE = 255.0

_BT601 = np.array([0.299, 0.587, 0.114])


def luma(image: np.ndarray) -> np.ndarray:
    """BT.601 luma of an RGB image as float64; 2-D inputs pass through."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 2:
        return arr
    if arr.ndim == 3 and arr.shape[2] == 3:
        return arr @ _BT601
    raise ValueError(f"expected (H, W) or (H, W, 3) image, got shape {arr.shape}")


def _gaussian_window(size: int = WINDOW_SIZE, sigma: float = SIGMA) -> np.ndarray:
    half = (size - 1) / 2
    x = np.arange(size) - half
    w = np.exp(-(x**2) / (2.0 * sigma**2))
    return w / w.sum()


def _local_mean(img: np.ndarray, window: np.ndarray) -> np.ndarray:
    # Separable weighted mean, cropped to window positions fully inside the image.
    out = correlate1d(img, window, axis=0, mode="constant")
    out = correlate1d(out, window, axis=1, mode="constant")
    r = (window.size - 1) // 2
    return out[r:-r, r:-r]


def ssim(x: np.ndarray, y: np.ndarray) -> float:
    """Mean structural similarity between two same-sized images, in [-1, 1].

    Raises:
        ValueError: On a size mismatch or images smaller than the window.
    """
    lx, ly = luma(x), luma(y)
    if lx.shape != ly.shape:
        raise ValueError(f"image size mismatch: {lx.shape} vs {ly.shape}")
    if min(lx.shape) < WINDOW_SIZE:
        raise ValueError(f"images smaller than the {WINDOW_SIZE}x{WINDOW_SIZE} window")
    w = _gaussian_window()
    c1 = (K1 * DATA_RANGE) ** 2
    c2 = (K2 * DATA_RANGE) ** 2

    mu_x = _local_mean(lx, w)
    mu_y = _local_mean(ly, w)
    mu_xx = _local_mean(lx * lx, w)
    mu_yy = _local_mean(ly * ly, w)
    mu_xy = _local_mean(lx * ly, w)

    var_x = mu_xx - mu_x * mu_x
    var_y = mu_yy - mu_y * mu_y
    cov = mu_xy - mu_x * mu_y

    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))
