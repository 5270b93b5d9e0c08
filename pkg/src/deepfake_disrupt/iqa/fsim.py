"""Feature similarity (FSIM) on luminance.

Phase congruency from a 4-scale, 4-orientation log-Gabor bank with noise
compensation, combined with Scharr gradient-magnitude similarity and
pooled with the pixelwise maximum phase congruency as weight.  Luminance
is evaluated on the 0-255 scale the fixed constants ``T1``/``T2`` assume.
"""

import numpy as np
from scipy import signal

from ..imagecore import to_gray

N_SCALE = 4
N_ORIENT = 4
MIN_WAVELENGTH = 6
MULT = 2.0
SIGMA_ON_F = 0.55
D_THETA_ON_SIGMA = 1.2
NOISE_K = 2.0
EPS = 1e-4
T1 = 0.85
T2 = 160.0

PARAMS = {
    "n_scale": N_SCALE,
    "n_orient": N_ORIENT,
    "min_wavelength": MIN_WAVELENGTH,
    "mult": MULT,
    "sigma_on_f": SIGMA_ON_F,
    "d_theta_on_sigma": D_THETA_ON_SIGMA,
    "noise_k": NOISE_K,
    "T1": T1,
    "T2": T2,
    "color": "BT.601 luma x255",
}

_SCHARR_X = np.array([[3, 0, -3], [10, 0, -10], [3, 0, -3]]) / 16.0
_SCHARR_Y = np.array([[3, 10, 3], [0, 0, 0], [-3, -10, -3]]) / 16.0


def _freq_range(n):
    if n % 2:
        return np.arange(-(n - 1) / 2, (n - 1) / 2 + 1) / (n - 1)
    return np.arange(-n / 2, n / 2) / n


def _polar_grid(rows, cols):
    x, y = np.meshgrid(_freq_range(cols), _freq_range(rows))
    radius = np.fft.ifftshift(np.sqrt(x**2 + y**2))
    theta = np.fft.ifftshift(np.arctan2(-y, x))
    return radius, theta


def _lowpass(rows, cols, cutoff=0.45, order=15):
    x, y = np.meshgrid(_freq_range(cols), _freq_range(rows))
    radius = np.sqrt(x**2 + y**2)
    return np.fft.ifftshift(1.0 / (1.0 + (radius / cutoff) ** (2 * order)))


def phase_congruency(im):
    """Phase congruency map of a 2-D float image."""
    rows, cols = im.shape
    spectrum = np.fft.fft2(im)
    radius, theta = _polar_grid(rows, cols)
    radius[0, 0] = 1.0
    sin_t, cos_t = np.sin(theta), np.cos(theta)
    lp = _lowpass(rows, cols)

    log_gabor = []
    for s in range(N_SCALE):
        fo = 1.0 / (MIN_WAVELENGTH * MULT**s)
        lg = np.exp(-(np.log(radius / fo) ** 2) / (2 * np.log(SIGMA_ON_F) ** 2)) * lp
        lg[0, 0] = 0.0
        log_gabor.append(lg)

    theta_sigma = np.pi / N_ORIENT / D_THETA_ON_SIGMA
    energy_all = np.zeros((rows, cols))
    an_all = np.zeros((rows, cols))
    for o in range(N_ORIENT):
        angle = o * np.pi / N_ORIENT
        ds = sin_t * np.cos(angle) - cos_t * np.sin(angle)
        dc = cos_t * np.cos(angle) + sin_t * np.sin(angle)
        spread = np.exp(-np.abs(np.arctan2(ds, dc)) ** 2 / (2 * theta_sigma**2))

        sum_e = np.zeros((rows, cols))
        sum_o = np.zeros((rows, cols))
        sum_an = np.zeros((rows, cols))
        responses, spatial = [], []
        for s in range(N_SCALE):
            filt = log_gabor[s] * spread
            spatial.append(np.real(np.fft.ifft2(filt)) * np.sqrt(rows * cols))
            eo = np.fft.ifft2(spectrum * filt)
            responses.append(eo)
            sum_an += np.abs(eo)
            sum_e += eo.real
            sum_o += eo.imag
            if s == 0:
                em_n = np.sum(filt**2)

        x_energy = np.sqrt(sum_e**2 + sum_o**2) + EPS
        mean_e = sum_e / x_energy
        mean_o = sum_o / x_energy
        energy = np.zeros((rows, cols))
        for eo in responses:
            e, od = eo.real, eo.imag
            energy += e * mean_e + od * mean_o - np.abs(e * mean_o - od * mean_e)

        # noise threshold from the median squared response at the finest scale
        median_e2n = np.median(np.abs(responses[0]) ** 2)
        noise_power = (-median_e2n / np.log(0.5)) / em_n
        sum_an2 = sum(np.sum(f**2) for f in spatial)
        sum_aiaj = sum(np.sum(spatial[i] * spatial[j]) for i in range(N_SCALE) for j in range(i + 1, N_SCALE))
        noise_energy2 = 2 * noise_power * sum_an2 + 4 * noise_power * sum_aiaj
        tau = np.sqrt(noise_energy2 / 2)
        threshold = (tau * np.sqrt(np.pi / 2) + NOISE_K * np.sqrt((2 - np.pi / 2) * tau**2)) / 1.7
        energy_all += np.maximum(energy - threshold, 0.0)
        an_all += sum_an

    out = np.zeros_like(energy_all)
    np.divide(energy_all, an_all, out=out, where=an_all > 0)
    return out


def gradient_magnitude(im):
    gx = signal.convolve2d(im, _SCHARR_X, mode="same", boundary="fill")
    gy = signal.convolve2d(im, _SCHARR_Y, mode="same", boundary="fill")
    return np.sqrt(gx**2 + gy**2)


def _prepare(a):
    y = to_gray(a) * 255.0
    rows, cols = y.shape
    f = max(1, int(round(min(rows, cols) / 256)))
    if f > 1:
        y = signal.convolve2d(y, np.full((f, f), 1.0 / f**2), mode="same")[::f, ::f]
    return y


def fsim(a, b):
    """FSIM of two images in [0, 1]; 1.0 means identical."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    ya, yb = _prepare(a), _prepare(b)
    pc_a, pc_b = phase_congruency(ya), phase_congruency(yb)
    g_a, g_b = gradient_magnitude(ya), gradient_magnitude(yb)
    s_pc = (2 * pc_a * pc_b + T1) / (pc_a**2 + pc_b**2 + T1)
    s_g = (2 * g_a * g_b + T2) / (g_a**2 + g_b**2 + T2)
    pc_m = np.maximum(pc_a, pc_b)
    total = pc_m.sum()
    if total == 0:
        # no phase structure anywhere: fall back to unweighted gradient similarity
        return float(s_g.mean())
    return float((s_g * s_pc * pc_m).sum() / total)
