"""Structural similarity on luminance with the canonical Gaussian window."""

import numpy as np
from scipy import signal

from ..imagecore import to_gray

WINDOW = 11
SIGMA = 1.5
K1 = 0.01
K2 = 0.03
DATA_RANGE = 1.0

PARAMS = {"window": WINDOW, "sigma": SIGMA, "k1": K1, "k2": K2, "data_range": DATA_RANGE, "color": "BT.601 luma"}


def gaussian_window(size=WINDOW, sigma=SIGMA):
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim_map(a, b, data_range=DATA_RANGE):
    """Per-window SSIM over all fully-contained 11x11 windows."""
    a = to_gray(a)
    b = to_gray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if min(a.shape) < WINDOW:
        raise ValueError(f"images must be at least {WINDOW}x{WINDOW}")
    w = gaussian_window()
    c1 = (K1 * data_range) ** 2
    c2 = (K2 * data_range) ** 2

    def filt(z):
        return signal.correlate2d(z, w, mode="valid")

    mu_a, mu_b = filt(a), filt(b)
    # symmetric products keep ssim(a, b) == ssim(b, a) bit-for-bit
    mu_ab = mu_a * mu_b
    var_a = filt(a * a) - mu_a * mu_a
    var_b = filt(b * b) - mu_b * mu_b
    cov = filt(a * b) - mu_ab
    num = (2 * mu_ab + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a, b):
    """Mean SSIM of two ``(H, W[, C])`` images in [0, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(ssim_map(a, b).mean())
