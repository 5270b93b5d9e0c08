"""FGSM and PGD on the substitute, sharing the projection path of the main attack."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .imagecore import clip_eps, clip_image_range, to_batch

JITTER_SEED = 0
JITTER_SCALE = 0.1


@dataclass
class BaselineConfig:
    method: str = "pgd"
    eps: float = 0.03
    alpha: float = 0.006
    iters: int = 10
    loss_target: str = "both"  # pixel | latent | both
    random_start: bool = True

    def __post_init__(self):
        if self.method not in ("fgsm", "pgd"):
            raise ValueError(f"unknown baseline {self.method!r}")
        if self.loss_target not in ("pixel", "latent", "both"):
            raise ValueError(f"unknown loss_target {self.loss_target!r}")
        if self.eps < 0:
            raise ValueError("eps must be non-negative")
        if self.method == "fgsm":
            self.iters = 1
            self.alpha = self.eps
            self.random_start = False


def disruption_surrogate(S, x, x_adv, loss_target="both"):
    """Per-image mean-L1 discrepancy of reconstructions and/or latents."""
    z, z_adv = S.encoder(x), S.encoder(x_adv)
    out = 0.0
    if loss_target in ("pixel", "both"):
        out = out + (S.decoder(z) - S.decoder(z_adv)).abs().flatten(1).mean(dim=1)
    if loss_target in ("latent", "both"):
        out = out + (z - z_adv).abs().flatten(1).mean(dim=1)
    return out


def _grad(S, x, point, loss_target):
    point = point.detach().requires_grad_(True)
    loss = disruption_surrogate(S, x, point, loss_target).sum()
    (grad,) = torch.autograd.grad(loss, point)
    if not torch.isfinite(grad).all():
        raise FloatingPointError("non-finite gradient in baseline attack")
    return grad


def _sign_step(S, x, x_cur, cfg):
    grad = _grad(S, x, x_cur, cfg.loss_target)
    # at x_cur == x the L1 discrepancy sits on its kink and the gradient is exactly 0;
    # re-evaluate those images at a fixed tiny jitter so a direction exists
    dead = grad.flatten(1).abs().amax(dim=1) == 0
    if dead.any():
        gen = torch.Generator()
        gen.manual_seed(JITTER_SEED)
        jitter = (torch.rand(x_cur.shape, generator=gen, dtype=x_cur.dtype) * 2 - 1) * JITTER_SCALE * max(cfg.eps, 1e-12)
        regrad = _grad(S, x, x_cur + jitter, cfg.loss_target)
        grad = torch.where(dead[:, None, None, None], regrad, grad)
    return grad.sign()


def _project(x, x_adv, eps):
    if eps == 0:
        return x.clone()
    return clip_image_range(x + clip_eps(x_adv - x, eps))


def pgd_attack(S, x, cfg=None, generator=None, seed=0):
    """``iters`` signed-gradient ascent steps, each projected onto the eps-ball and image range."""
    cfg = cfg or BaselineConfig()
    single = isinstance(x, np.ndarray)
    xt = to_batch([x]) if single else x.detach()
    if cfg.random_start and cfg.eps > 0:
        gen = generator
        if gen is None:
            gen = torch.Generator()
            gen.manual_seed(int(seed))
        start = (torch.rand(xt.shape, generator=gen, dtype=xt.dtype) * 2 - 1) * cfg.eps
        x_adv = _project(xt, xt + start, cfg.eps)
    else:
        x_adv = xt.clone()
    for _ in range(cfg.iters):
        if cfg.eps == 0:
            break
        x_adv = _project(xt, x_adv + cfg.alpha * _sign_step(S, xt, x_adv, cfg), cfg.eps)
    x_adv = x_adv.detach()
    return x_adv[0].permute(1, 2, 0).double().numpy() if single else x_adv


def fgsm_attack(S, x, cfg=None):
    """Single signed-gradient step of size eps."""
    cfg = cfg or BaselineConfig(method="fgsm")
    if cfg.method != "fgsm":
        cfg = BaselineConfig(method="fgsm", eps=cfg.eps, loss_target=cfg.loss_target)
    return pgd_attack(S, x, cfg)
