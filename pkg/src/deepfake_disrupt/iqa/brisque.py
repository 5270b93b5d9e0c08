"""BRISQUE no-reference quality score.

Features: MSCN coefficients of the 0-255 luminance (7x7 Gaussian,
sigma 7/6, stabiliser 1) at full and half resolution.  Per scale, a
generalised Gaussian fit of the MSCN field (shape, variance) and an
asymmetric generalised Gaussian fit of the four neighbour products
(shape, mean, left variance, right variance): 18 features per scale,
36 in total.  Shape parameters come from moment matching over a fixed
grid, and the half-resolution image uses bicubic resampling with an
anti-aliasing kernel.  The score is an RBF epsilon-SVR prediction using
the bundled LIVE-trained coefficients; lower means better quality.
"""

from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import signal
from scipy.special import gamma as gamma_fn

from ..imagecore import to_gray

MODEL_PATH = Path(__file__).parent / "data" / "brisque_live_svr.txt"
MIN_SIDE = 32
_SHAPE_GRID = np.arange(0.2, 10.001, 0.001)
_NEIGHBOUR_SHIFTS = ((0, 1), (1, 0), (1, 1), (-1, 1))

PARAMS = {"window": 7, "sigma": 7 / 6, "stabilizer": 1.0, "scales": 2, "shape_grid": "0.2:0.001:10"}


class BrisqueModel:
    """Parsed SVR model file: key/value header followed by a coefficient table."""

    def __init__(self, path=MODEL_PATH):
        header, rows = {}, []
        in_table = False
        for line in Path(path).read_text().splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if in_table:
                rows.append([float(v) for v in line.split()])
            elif line == "support_vectors":
                in_table = True
            else:
                key, *vals = line.split()
                header[key] = vals
        self.path = Path(path)
        self.format_version = int(header["format_version"][0])
        self.model_id = header["model_id"][0]
        self.n_features = int(header["n_features"][0])
        self.gamma = float(header["gamma"][0])
        self.rho = float(header["rho"][0])
        self.lower = float(header["scale_lower"][0])
        self.upper = float(header["scale_upper"][0])
        self.feature_min = np.array(header["feature_min"], dtype=np.float64)
        self.feature_max = np.array(header["feature_max"], dtype=np.float64)
        table = np.array(rows, dtype=np.float64)
        if table.shape != (int(header["n_support_vectors"][0]), self.n_features + 1):
            raise ValueError(f"malformed BRISQUE model table in {path}: {table.shape}")
        self.dual_coef = table[:, 0]
        self.support_vectors = table[:, 1:]

    @property
    def version(self):
        return f"{self.model_id}/v{self.format_version}"

    def scale(self, features):
        span = self.feature_max - self.feature_min
        return self.lower + (self.upper - self.lower) * (features - self.feature_min) / span

    def predict(self, features):
        z = self.scale(np.asarray(features, dtype=np.float64))
        d2 = np.sum((self.support_vectors - z) ** 2, axis=1)
        return float(self.dual_coef @ np.exp(-self.gamma * d2) - self.rho)


@lru_cache(maxsize=None)
def default_model():
    return BrisqueModel()


def _gaussian_7():
    ax = np.arange(-3, 4)
    xx, yy = np.meshgrid(ax, ax)
    sigma = 7 / 6
    w = np.exp(-(xx**2 + yy**2) / (2 * sigma**2))
    return w / w.sum()


def mscn(im):
    """Mean-subtracted contrast-normalised coefficients (zero-padded local moments)."""
    w = _gaussian_7()
    mu = signal.correlate2d(im, w, mode="same", boundary="fill")
    var = signal.correlate2d(im * im, w, mode="same", boundary="fill") - mu * mu
    return (im - mu) / (np.sqrt(np.abs(var)) + 1.0)


def fit_ggd(vec):
    """Shape and standard deviation of a zero-mean generalised Gaussian."""
    r_gam = gamma_fn(1 / _SHAPE_GRID) * gamma_fn(3 / _SHAPE_GRID) / gamma_fn(2 / _SHAPE_GRID) ** 2
    sigma_sq = np.mean(vec**2)
    rho = sigma_sq / np.mean(np.abs(vec)) ** 2
    return _SHAPE_GRID[np.argmin(np.abs(rho - r_gam))], np.sqrt(sigma_sq)


def fit_aggd(vec):
    """Shape, left std and right std of an asymmetric generalised Gaussian."""
    r_gam = gamma_fn(2 / _SHAPE_GRID) ** 2 / (gamma_fn(1 / _SHAPE_GRID) * gamma_fn(3 / _SHAPE_GRID))
    left = vec[vec < 0]
    right = vec[vec > 0]
    left_std = np.sqrt(np.mean(left**2)) if left.size else 0.0
    right_std = np.sqrt(np.mean(right**2)) if right.size else 0.0
    g = left_std / right_std if right_std > 0 else 1.0
    r_hat = np.mean(np.abs(vec)) ** 2 / np.mean(vec**2)
    r_hat_norm = r_hat * (g**3 + 1) * (g + 1) / (g**2 + 1) ** 2
    return _SHAPE_GRID[np.argmin((r_gam - r_hat_norm) ** 2)], left_std, right_std


def _cubic(x):
    ax = np.abs(x)
    ax2, ax3 = ax**2, ax**3
    return (1.5 * ax3 - 2.5 * ax2 + 1) * (ax <= 1) + (-0.5 * ax3 + 2.5 * ax2 - 4 * ax + 2) * ((ax > 1) & (ax <= 2))


def _resize_weights(n_in, scale):
    n_out = int(np.ceil(n_in * scale))
    width = 4.0 / scale
    u = np.arange(1, n_out + 1) / scale + 0.5 * (1 - 1 / scale)
    left = np.floor(u - width / 2)
    taps = int(np.ceil(width)) + 2
    idx = left[:, None] + np.arange(taps)[None, :]
    w = scale * _cubic(scale * (u[:, None] - idx))
    w /= w.sum(axis=1, keepdims=True)
    mirror = np.concatenate([np.arange(n_in), np.arange(n_in)[::-1]])
    idx = mirror[np.mod(idx.astype(int) - 1, 2 * n_in)]
    mat = np.zeros((n_out, n_in))
    np.add.at(mat, (np.repeat(np.arange(n_out), taps), idx.ravel()), w.ravel())
    return mat


def downscale_half(im):
    """Bicubic half-size resize with an anti-aliasing (stretched) kernel and mirrored borders."""
    rows, cols = im.shape
    return _resize_weights(rows, 0.5) @ im @ _resize_weights(cols, 0.5).T


def _scale_features(im):
    coef = mscn(im)
    alpha, std = fit_ggd(coef.ravel())
    feats = [alpha, std**2]
    for shift in _NEIGHBOUR_SHIFTS:
        pair = (coef * np.roll(coef, shift, axis=(0, 1))).ravel()
        nu, lstd, rstd = fit_aggd(pair)
        const = np.sqrt(gamma_fn(1 / nu)) / np.sqrt(gamma_fn(3 / nu))
        mean = (rstd - lstd) * (gamma_fn(2 / nu) / gamma_fn(1 / nu)) * const
        feats += [nu, mean, lstd**2, rstd**2]
    return feats


def brisque_features(x):
    """The 36 natural-scene-statistics features of an image in [0, 1]."""
    im = to_gray(x) * 255.0
    if min(im.shape) < MIN_SIDE:
        raise ValueError(f"image too small for BRISQUE: {im.shape}, need at least {MIN_SIDE}x{MIN_SIDE}")
    feats = _scale_features(im) + _scale_features(downscale_half(im))
    return np.array(feats, dtype=np.float64)


def brisque(x, model=None):
    """BRISQUE score; higher means worse perceived quality."""
    return (model or default_model()).predict(brisque_features(x))
