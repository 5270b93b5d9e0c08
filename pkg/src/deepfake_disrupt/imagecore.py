"""Image primitives shared across the attack pipeline.

Images are ``float64`` numpy arrays of shape ``(H, W, C)`` with values in
``[0, 1]``.  Batched training code works on ``torch`` tensors in ``NCHW``
layout; the projection helpers below accept either.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

log = logging.getLogger(__name__)

MIN_SIDE = 8


def check_image(x, name="image"):
    """Validate an ``(H, W, C)`` image array and return it as float64."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError(f"{name} must have shape (H, W, C), got {x.shape}")
    h, w, c = x.shape
    if h < MIN_SIDE or w < MIN_SIDE:
        raise ValueError(f"{name} must be at least {MIN_SIDE}x{MIN_SIDE}, got {h}x{w}")
    if c not in (1, 3):
        raise ValueError(f"{name} must have 1 or 3 channels, got {c}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite values")
    if x.min() < 0.0 or x.max() > 1.0:
        raise ValueError(f"{name} values must lie in [0, 1]")
    return x


@dataclass
class Perturbation:
    """Additive residual ``r`` with an enforced infinity-norm bound."""

    data: np.ndarray
    bound: float

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.bound <= 0:
            raise ValueError("perturbation bound must be positive")
        if np.abs(self.data).max(initial=0.0) > self.bound + 1e-9:
            raise ValueError("perturbation exceeds its infinity-norm bound")

    @property
    def linf(self):
        return float(np.abs(self.data).max(initial=0.0))


@dataclass(frozen=True)
class WarpParams:
    """Similarity warp: rotation in degrees, isotropic scale, shifts as image fractions."""

    rotation: float = 0.0
    scale: float = 1.0
    shift_x: float = 0.0
    shift_y: float = 0.0

    def is_identity(self):
        return self.rotation == 0.0 and self.scale == 1.0 and self.shift_x == 0.0 and self.shift_y == 0.0

    def check_bounds(self, max_rotation=10.0, max_scale=0.05, max_shift=0.05):
        if abs(self.rotation) > max_rotation:
            raise ValueError(f"rotation {self.rotation} outside +-{max_rotation}")
        if abs(self.scale - 1.0) > max_scale + 1e-12:
            raise ValueError(f"scale {self.scale} outside 1+-{max_scale}")
        if abs(self.shift_x) > max_shift or abs(self.shift_y) > max_shift:
            raise ValueError(f"shift ({self.shift_x}, {self.shift_y}) outside +-{max_shift}")
        return self

    @classmethod
    def sample(cls, rng, max_rotation=10.0, max_scale=0.05, max_shift=0.05):
        return cls(
            rotation=float(rng.uniform(-max_rotation, max_rotation)),
            scale=float(rng.uniform(1.0 - max_scale, 1.0 + max_scale)),
            shift_x=float(rng.uniform(-max_shift, max_shift)),
            shift_y=float(rng.uniform(-max_shift, max_shift)),
        )


def _is_tensor(x):
    return torch.is_tensor(x)


def clip_eps(delta, eps):
    """Clamp ``delta`` elementwise into ``[-eps, eps]``.

    Numpy input yields a :class:`Perturbation`; tensors are clamped in the
    tensor domain so the training loops share this code path.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    if _is_tensor(delta):
        return delta.clamp(-eps, eps)
    return Perturbation(np.clip(np.asarray(delta, dtype=np.float64), -eps, eps), float(eps))


def clip_image_range(x):
    """Clamp into ``[0, 1]``; non-finite input is an error."""
    if _is_tensor(x):
        if not torch.isfinite(x).all():
            raise ValueError("non-finite values")
        return x.clamp(0.0, 1.0)
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite values")
    return np.clip(x, 0.0, 1.0)


def apply_perturbation(x, r):
    """Return ``clip_image_range(x + r)``."""
    rdata = r.data if isinstance(r, Perturbation) else r
    if tuple(np.shape(x)) != tuple(np.shape(rdata)):
        raise ValueError(f"shape mismatch: image {np.shape(x)} vs perturbation {np.shape(rdata)}")
    return clip_image_range(x + rdata)


def project(x_adv, x, eps):
    """Project ``x_adv`` onto the eps-ball around ``x`` intersected with the image range."""
    r = clip_eps(x_adv - x, eps)
    return clip_image_range(x + (r.data if isinstance(r, Perturbation) else r))


def _inverse_affine(params, h, w):
    """Matrix mapping output pixel (row, col) to input coordinates, about the image centre."""
    theta = math.radians(params.rotation)
    cos, sin = math.cos(theta), math.sin(theta)
    s = params.scale
    # forward: p_out = s * R (p_in - c) + c + t ; inverse: p_in = R^T (p_out - c - t) / s + c
    inv = np.array([[cos, sin], [-sin, cos]]) / s  # acts on (x, y)
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    tx, ty = params.shift_x * w, params.shift_y * h
    return inv, np.array([cx, cy]), np.array([tx, ty])


def random_warp(x, params, rng_seed=0):
    """Rotate, scale and shift ``x`` with bilinear resampling and edge replication.

    ``rng_seed`` is accepted for API symmetry with :func:`sample_warp`; the
    warp itself is fully determined by ``params``.
    """
    x = np.asarray(x, dtype=np.float64)
    if params.is_identity():
        return x.copy()
    h, w, _ = x.shape
    inv, c, t = _inverse_affine(params, h, w)
    rows, cols = np.mgrid[0:h, 0:w].astype(np.float64)
    px = cols - c[0] - t[0]
    py = rows - c[1] - t[1]
    sx = inv[0, 0] * px + inv[0, 1] * py + c[0]
    sy = inv[1, 0] * px + inv[1, 1] * py + c[1]
    sx = np.clip(sx, 0.0, w - 1.0)
    sy = np.clip(sy, 0.0, h - 1.0)
    x0 = np.floor(sx).astype(int)
    y0 = np.floor(sy).astype(int)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (sx - x0)[..., None]
    fy = (sy - y0)[..., None]
    top = x[y0, x0] * (1 - fx) + x[y0, x1] * fx
    bottom = x[y1, x0] * (1 - fx) + x[y1, x1] * fx
    return clip_image_range(top * (1 - fy) + bottom * fy)


def sample_warp(x, rng_seed, max_rotation=10.0, max_scale=0.05, max_shift=0.05):
    """Draw random :class:`WarpParams` from ``rng_seed`` and apply them."""
    rng = np.random.default_rng(rng_seed)
    params = WarpParams.sample(rng, max_rotation, max_scale, max_shift)
    return random_warp(x, params)


def warp_batch(x, generator=None, max_rotation=10.0, max_scale=0.05, max_shift=0.05):
    """Independent random similarity warp per image of an ``NCHW`` batch.

    Same geometry as :func:`random_warp` (bilinear, border replication,
    rotation about the pixel-grid centre), expressed with ``grid_sample``.
    """
    n, _, h, w = x.shape

    def uniform(lo, hi):
        return lo + (hi - lo) * torch.rand(n, generator=generator, dtype=x.dtype)

    theta = torch.deg2rad(uniform(-max_rotation, max_rotation))
    scale = uniform(1.0 - max_scale, 1.0 + max_scale)
    tx = uniform(-max_shift, max_shift) * w
    ty = uniform(-max_shift, max_shift) * h
    return _affine_resample(x, theta, scale, tx, ty)


def _affine_resample(x, theta, scale, tx, ty):
    n, _, h, w = x.shape
    cos, sin = torch.cos(theta), torch.sin(theta)
    # inverse map in pixel units, converted to align_corners=True normalised coordinates
    a = cos / scale
    b = sin / scale
    ax, ay = (w - 1) / 2.0, (h - 1) / 2.0
    mat = torch.zeros(n, 2, 3, dtype=x.dtype)
    mat[:, 0, 0] = a
    mat[:, 0, 1] = b * ay / ax
    mat[:, 0, 2] = -(a * tx + b * ty) / ax
    mat[:, 1, 0] = -b * ax / ay
    mat[:, 1, 1] = a
    mat[:, 1, 2] = -(-b * tx + a * ty) / ay
    grid = F.affine_grid(mat, list(x.shape), align_corners=True)
    return F.grid_sample(x, grid, mode="bilinear", padding_mode="border", align_corners=True)


def realism_transform(x, rng, max_rotation=2.0, max_shift=0.02, resize_factor=1.25):
    """Resize round-trip plus a mild rotation/shift, applied before a target model sees ``x``.

    ``x`` is an ``NCHW`` tensor; one transform is drawn per image from ``rng``.
    """
    n, _, h, w = x.shape
    up = F.interpolate(x, scale_factor=resize_factor, mode="bilinear", align_corners=False)
    x = F.interpolate(up, size=(h, w), mode="bilinear", align_corners=False, antialias=True)
    theta = torch.deg2rad(torch.as_tensor(rng.uniform(-max_rotation, max_rotation, n), dtype=x.dtype))
    tx = torch.as_tensor(rng.uniform(-max_shift, max_shift, n) * w, dtype=x.dtype)
    ty = torch.as_tensor(rng.uniform(-max_shift, max_shift, n) * h, dtype=x.dtype)
    return _affine_resample(x, theta, torch.ones(n, dtype=x.dtype), tx, ty).clamp(0.0, 1.0)


def to_batch(images, dtype=torch.float32):
    """Stack ``(H, W, C)`` arrays into an ``NCHW`` tensor."""
    arr = np.stack([np.asarray(im) for im in images]).transpose(0, 3, 1, 2)
    return torch.as_tensor(np.ascontiguousarray(arr), dtype=dtype)


def from_batch(x):
    """Inverse of :func:`to_batch`; returns a float64 ``(N, H, W, C)`` array."""
    return x.detach().cpu().double().numpy().transpose(0, 2, 3, 1)


def to_gray(x):
    """ITU-R BT.601 luma of an ``(H, W, C)`` image, or the single channel as-is."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        return x
    if x.shape[-1] == 1:
        return x[..., 0]
    return x[..., 0] * 0.299 + x[..., 1] * 0.587 + x[..., 2] * 0.114
