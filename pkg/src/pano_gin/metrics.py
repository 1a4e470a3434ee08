"""PSNR and SSIM on [0, 1] images (float64 throughout)."""

from __future__ import annotations

import math

import numpy as np
from scipy.ndimage import correlate1d

PSNR_INF = math.inf

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0, where: np.ndarray | None = None) -> float:
    """10·log10(peak² / MSE); identical inputs give ``inf``.

    ``where`` restricts the MSE to a boolean region broadcastable to the images.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    if peak <= 0:
        raise ValueError(f"psnr: peak must be positive, got {peak}")
    sq = (a - b) ** 2
    if where is not None:
        sel = np.broadcast_to(where, sq.shape)
        if not sel.any():
            return PSNR_INF
        mse = float(sq[sel].mean())
    else:
        mse = float(sq.mean())
    if mse == 0.0:
        return PSNR_INF
    return 10.0 * math.log10(peak * peak / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def to_gray(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    return img.mean(axis=0) if img.ndim == 3 else img


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    r = len(g) // 2
    out = correlate1d(correlate1d(img, g, axis=0, mode="constant"), g, axis=1, mode="constant")
    return out[r:img.shape[0] - r, r:img.shape[1] - r]


def ssim_components(a: np.ndarray, b: np.ndarray, data_range: float = 1.0):
    """Luminance and contrast-structure maps over every fully contained 11×11 window.

    Their product is the SSIM map. Only the second factor is unchanged when the
    same constant is added to both images.
    """
    x, y = to_gray(a), to_gray(b)
    if x.shape != y.shape:
        raise ValueError(f"ssim: shape mismatch {np.shape(a)} vs {np.shape(b)}")
    if min(x.shape) < SSIM_WINDOW:
        raise ValueError(f"ssim: image {x.shape} is smaller than the {SSIM_WINDOW}px window")
    g = gaussian_window()
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mx, my = _filter_valid(x, g), _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mx * mx
    syy = _filter_valid(y * y, g) - my * my
    sxy = _filter_valid(x * y, g) - mx * my
    return (2 * mx * my + c1) / (mx * mx + my * my + c1), (2 * sxy + c2) / (sxx + syy + c2)


def ssim_map(a: np.ndarray, b: np.ndarray, data_range: float = 1.0) -> np.ndarray:
    lum, cs = ssim_components(a, b, data_range)
    return lum * cs


def ssim(a: np.ndarray, b: np.ndarray, data_range: float = 1.0) -> float:
    """Mean SSIM after channel-mean grayscale conversion."""
    return float(ssim_map(a, b, data_range).mean())
