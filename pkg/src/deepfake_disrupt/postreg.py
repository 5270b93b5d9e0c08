"""Post-regularization: distil a TCA-GAN example into a noisy neighbour.

Starting from ``x_adv`` plus small uniform noise, take ``N`` sign-gradient
ascent steps on the latent alignment ``<S_e(x_radv) - S_e(anchor), W> / |x|_F``
with ``W = S_e(x_adv) - S_e(anchor)`` fixed up front; after every step
the result is projected onto the eps-ball around ``x`` and the image range.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import torch

from .imagecore import clip_eps, clip_image_range, to_batch
from .tcagan import generate_perturbation
from .utils import substream, write_csv

log = logging.getLogger(__name__)


@dataclass
class PostRegConfig:
    eps: float = 0.03
    alpha: float = 0.006
    iters: int = 10
    init_noise_scale: float = 0.01
    anchor: str = "reconstruction"  # or "input"

    def __post_init__(self):
        if self.iters < 1:
            raise ValueError("post-regularization needs at least one iteration")
        if not 0 < self.alpha <= self.eps:
            raise ValueError("alpha must satisfy 0 < alpha <= eps")
        if self.anchor not in ("reconstruction", "input"):
            raise ValueError("anchor must be 'reconstruction' or 'input'")


def postreg_objective(S, x_radv, x_rec, W, x):
    """Per-image ``sum((S_e(x_radv) - S_e(x_rec)) * W) / ||x||_F`` (NCHW tensors)."""
    norm = x.flatten(1).norm(dim=1)
    if torch.any(norm == 0):
        raise ValueError("degenerate all-zero image")
    diff = S.encoder(x_radv) - S.encoder(x_rec)
    return (diff * W).flatten(1).sum(dim=1) / norm


def init_neighborhood(x_adv, scale, seed=0, generator=None):
    """``x_adv`` plus uniform noise in ``[-scale, scale]``, range-clipped."""
    if not scale > 0:
        raise ValueError("scale must be positive")
    if isinstance(x_adv, np.ndarray):
        rng = np.random.default_rng(seed)
        return clip_image_range(x_adv + rng.uniform(-scale, scale, x_adv.shape))
    gen = generator
    if gen is None:
        gen = torch.Generator()
        gen.manual_seed(int(seed))
    noise = (torch.rand(x_adv.shape, generator=gen, dtype=x_adv.dtype) * 2 - 1) * scale
    return clip_image_range(x_adv + noise)


def _per_image_init(x_adv, scale, seed, indices):
    # one RNG stream per (seed, image index) so results do not depend on batching
    out = torch.empty_like(x_adv)
    for k, idx in enumerate(indices):
        out[k] = init_neighborhood(x_adv[k : k + 1], scale, substream(seed, f"postreg/{idx}"))[0]
    return out


def post_regularize_batch(S, x, x_adv, cfg=None, seed=0, trace=None, _on_weight=None, indices=None):
    """Refine an ``NCHW`` batch; returns ``(x_radv, objective_init, objective_final)``.

    ``indices`` are the images' global positions, used to derive their
    initialization noise streams (defaults to ``0..N-1``).
    """
    cfg = cfg or PostRegConfig()
    x = x.detach()
    with torch.no_grad():
        x_rec = S(x) if cfg.anchor == "reconstruction" else x.clone()
        W = S.encoder(x_adv) - S.encoder(x_rec)
    if _on_weight is not None:
        _on_weight(W)
    indices = range(x.shape[0]) if indices is None else indices
    x_radv = _per_image_init(x_adv.detach(), cfg.init_noise_scale, seed, indices)
    x_radv = clip_image_range(x + clip_eps(x_radv - x, cfg.eps))
    obj_init = None
    for k in range(cfg.iters):
        x_radv = x_radv.detach().requires_grad_(True)
        obj = postreg_objective(S, x_radv, x_rec, W, x)
        (grad,) = torch.autograd.grad(obj.sum(), x_radv)
        if not torch.isfinite(grad).all():
            raise FloatingPointError(f"non-finite gradient at post-regularization step {k}")
        if obj_init is None:
            obj_init = obj.detach()
        r = clip_eps(x_radv.detach() - x + cfg.alpha * grad.sign(), cfg.eps)
        x_radv = clip_image_range(x + r)
        if trace is not None:
            with torch.no_grad():
                val = postreg_objective(S, x_radv, x_rec, W, x)
            trace.append((k, val.tolist(), (x_radv - x).abs().flatten(1).max(dim=1).values.tolist()))
    with torch.no_grad():
        obj_final = postreg_objective(S, x_radv, x_rec, W, x)
    return x_radv.detach(), obj_init, obj_final


def post_regularize(S, G_P, x, cfg=None, seed=0, trace_path=None):
    """Regularized adversarial example for one ``(H, W, C)`` image (or an NCHW batch)."""
    cfg = cfg or PostRegConfig()
    single = isinstance(x, np.ndarray)
    xt = to_batch([x]) if single else x
    r = generate_perturbation(G_P, xt)
    x_adv = clip_image_range(xt + clip_eps(r, cfg.eps))
    trace = [] if trace_path else None
    out, _, _ = post_regularize_batch(S, xt, x_adv, cfg, seed, trace)
    if trace_path:
        rows = [(k, float(np.mean(v)), float(np.max(m))) for k, v, m in trace]
        write_csv(trace_path, ["iteration", "objective", "max_perturbation"], rows)
    return out[0].permute(1, 2, 0).double().numpy() if single else out
