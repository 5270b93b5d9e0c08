"""Transferable cycle adversary GAN.

``G_P`` maps a face to a bounded perturbation, ``G_R`` estimates the
perturbation carried by an adversarial face, and two critics score the
legitimate (``D_L``) and adversarial (``D_A``) domains.  Generators
minimise ``L_adv + lambda_cyc * L_cyc + lambda_disr * L_disr`` against a
frozen substitute; critics maximise ``L_adv``.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .imagecore import Perturbation, clip_image_range, project, to_batch
from .substitute import TrainingDiverged, freeze
from .utils import config_dict, config_hash, torch_generator, write_csv, write_json

log = logging.getLogger(__name__)

CYCLE_MODES = ("none", "unidirectional", "bidirectional")


@dataclass
class TcaGanConfig:
    lambda_cyc: float = 10.0
    lambda_disr: float = 1.0
    eps: float = 0.03
    critic_steps_per_gen_step: int | None = None  # None: 1 with gradient penalty, 5 with weight clipping
    lipschitz_method: str = "gradient_penalty"
    gp_weight: float = 10.0
    clip_value: float = 0.01
    epochs: int = 40
    lr: float = 2e-4
    batch: int = 8
    seed: int = 0
    cycle_mode: str = "unidirectional"
    latent_disruption: bool = True
    gen_channels: tuple = (16, 32, 64)
    critic_channels: tuple = (16, 32, 64, 128)
    bidir_pgd_iters: int = 5

    def __post_init__(self):
        if self.lambda_cyc < 0 or self.lambda_disr < 0:
            raise ValueError("loss weights must be non-negative")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.lipschitz_method not in ("gradient_penalty", "weight_clip"):
            raise ValueError(f"unknown lipschitz_method {self.lipschitz_method!r}")
        if self.cycle_mode not in CYCLE_MODES:
            raise ValueError(f"cycle_mode must be one of {CYCLE_MODES}")
        if self.critic_steps_per_gen_step is None:
            self.critic_steps_per_gen_step = 1 if self.lipschitz_method == "gradient_penalty" else 5
        self.gen_channels = tuple(self.gen_channels)
        self.critic_channels = tuple(self.critic_channels)


class _UNet(nn.Module):
    """Encoder-decoder with skip connections; output squashed to ``[-bound, bound]``."""

    def __init__(self, channels=(16, 32, 64), in_channels=3, bound=0.03):
        super().__init__()
        channels = tuple(int(c) for c in channels)
        self.bound = float(bound)
        self.arch_spec = {"channels": list(channels), "in_channels": in_channels, "bound": self.bound}
        self.stem = nn.Sequential(nn.Conv2d(in_channels, channels[0], 3, padding=1), nn.LeakyReLU(0.2))
        self.down = nn.ModuleList(
            nn.Sequential(nn.Conv2d(a, b, 4, stride=2, padding=1), nn.LeakyReLU(0.2))
            for a, b in zip(channels[:-1], channels[1:])
        )
        self.up = nn.ModuleList(
            nn.Sequential(nn.ConvTranspose2d(b if i == 0 else 2 * b, a, 4, stride=2, padding=1), nn.LeakyReLU(0.2))
            for i, (a, b) in enumerate(reversed(list(zip(channels[:-1], channels[1:]))))
        )
        last = channels[0] * (2 if len(channels) > 1 else 1)
        self.head = nn.Conv2d(last, in_channels, 3, padding=1)

    def forward(self, x):
        skips = [self.stem(x)]
        for d in self.down:
            skips.append(d(skips[-1]))
        h = skips.pop()
        for u in self.up:
            h = torch.cat([u(h), skips.pop()], dim=1)
        return self.bound * torch.tanh(self.head(h))


class AdversaryGenerator(_UNet):
    """``G_P``: perturbation with ``max|r| <= eps`` by construction."""

    @property
    def output_bound(self):
        return self.bound


class AdversaryRemover(_UNet):
    """``G_R``: estimate of the perturbation contained in its input."""


class DomainDiscriminator(nn.Module):
    """Strided-conv critic with an unbounded scalar score per image."""

    def __init__(self, channels=(16, 32, 64, 128), in_channels=3, domain="legitimate"):
        super().__init__()
        layers, c = [], in_channels
        for c_out in channels:
            layers += [nn.Conv2d(c, c_out, 4, stride=2, padding=1), nn.LeakyReLU(0.2)]
            c = c_out
        self.features = nn.Sequential(*layers)
        self.score = nn.Linear(c, 1)
        self.domain = domain
        self.arch_spec = {"channels": list(channels), "in_channels": in_channels, "domain": domain}

    def forward(self, x):
        return self.score(self.features(x).mean(dim=(2, 3))).squeeze(1)


def _l1_per_image(a, b):
    return (a - b).abs().flatten(1).mean(dim=1)


def loss_disr(S, x, x_adv, latent=True):
    """``exp(-|S_e(x) - S_e(x_adv)|_1) + exp(-|S(x) - S(x_adv)|_1)``, mean L1 per image, batch-averaged.

    With ``latent=False`` only the reconstruction term is kept (its value
    then lies in (0, 1]).
    """
    z, z_adv = S.encoder(x), S.encoder(x_adv)
    pixel = torch.exp(-_l1_per_image(S.decoder(z), S.decoder(z_adv)))
    if not latent:
        return pixel.mean()
    return (torch.exp(-_l1_per_image(z, z_adv)) + pixel).mean()


def loss_cyc(G_P, G_R, x, r=None, x_adv=None):
    """Mean ``|G_R(x + G_P(x)) - G_P(x)|``."""
    r = G_P(x) if r is None else r
    x_adv = clip_image_range(x + r) if x_adv is None else x_adv
    return (G_R(x_adv) - r).abs().mean()


def loss_cyc_backward(G_P, G_R, x_adv_ext):
    """Cycle on externally generated adversarial faces: remove, then re-add."""
    r_est = G_R(x_adv_ext)
    cleaned = clip_image_range(x_adv_ext - r_est)
    return (G_P(cleaned) - r_est).abs().mean()


def loss_adv(D_L, D_A, G_R, x, x_adv):
    """``D_L(x_adv) - D_L(x) + D_A(x_adv - G_R(x_adv)) - D_A(x_adv)``, batch-averaged."""
    return (D_L(x_adv) - D_L(x) + D_A(x_adv - G_R(x_adv)) - D_A(x_adv)).mean()


def total_loss(cfg, parts):
    """Weighted sum of the ``adv``, ``cyc`` and ``disr`` terms."""
    return parts["adv"] + cfg.lambda_cyc * parts["cyc"] + cfg.lambda_disr * parts["disr"]


def gradient_penalty(D, real, fake, generator=None):
    alpha = torch.rand(real.shape[0], 1, 1, 1, generator=generator, dtype=real.dtype)
    mix = (alpha * real + (1 - alpha) * fake).requires_grad_(True)
    (grad,) = torch.autograd.grad(D(mix).sum(), mix, create_graph=True)
    return ((grad.flatten(1).norm(dim=1) - 1) ** 2).mean()


def build_networks(cfg, in_channels=3):
    torch.manual_seed(cfg.seed)
    g_p = AdversaryGenerator(cfg.gen_channels, in_channels, cfg.eps)
    g_r = AdversaryRemover(cfg.gen_channels, in_channels, cfg.eps)
    d_l = DomainDiscriminator(cfg.critic_channels, in_channels, "legitimate")
    d_a = DomainDiscriminator(cfg.critic_channels, in_channels, "adversarial")
    return g_p, g_r, d_l, d_a


def generator_losses(S, nets, x, cfg, x_ext=None):
    g_p, g_r, d_l, d_a = nets
    r = g_p(x)
    x_adv = clip_image_range(x + r)
    parts = {
        "adv": loss_adv(d_l, d_a, g_r, x, x_adv),
        "cyc": loss_cyc(g_p, g_r, x, r, x_adv) if cfg.cycle_mode != "none" else x.new_zeros(()),
        "disr": loss_disr(S, x, x_adv, latent=cfg.latent_disruption),
    }
    if cfg.cycle_mode == "bidirectional" and x_ext is not None:
        parts["cyc"] = parts["cyc"] + loss_cyc_backward(g_p, g_r, x_ext)
    parts["total"] = total_loss(cfg, parts)
    return parts


def _critic_step(nets, opt_d, x, cfg, gen):
    g_p, g_r, d_l, d_a = nets
    with torch.no_grad():
        x_adv = clip_image_range(x + g_p(x))
        cleaned = x_adv - g_r(x_adv)
    l_adv = (d_l(x_adv) - d_l(x) + d_a(cleaned) - d_a(x_adv)).mean()
    loss = -l_adv
    if cfg.lipschitz_method == "gradient_penalty":
        loss = loss + cfg.gp_weight * (gradient_penalty(d_l, x, x_adv, gen) + gradient_penalty(d_a, cleaned, x_adv, gen))
    opt_d.zero_grad()
    loss.backward()
    opt_d.step()
    if cfg.lipschitz_method == "weight_clip":
        with torch.no_grad():
            for p in list(d_l.parameters()) + list(d_a.parameters()):
                p.clamp_(-cfg.clip_value, cfg.clip_value)
    return l_adv.item()


def _pgd_regenerate(S, x, eps, iters, gen):
    # imported lazily: baselines depends on the same projection helpers
    from .baselines import BaselineConfig, pgd_attack

    cfg = BaselineConfig(method="pgd", eps=eps, alpha=eps / 5 * 2, iters=iters)
    return pgd_attack(S, x, cfg, generator=gen)


def train_tcagan(S, data, cfg=None, out_dir=None, images=None, substitute_hash=None):
    """Alternating critic/generator training against a frozen substitute.

    Returns ``(G_P, G_R)``; the critics are attached as ``G_P.critics``.
    """
    cfg = cfg or TcaGanConfig()
    imgs = images if images is not None else data.select("train_tcagan")
    if not imgs:
        raise ValueError("train_tcagan split is empty")
    S = freeze(S)
    s_state = {k: v.clone() for k, v in S.state_dict().items()}
    nets = build_networks(cfg)
    g_p, g_r, d_l, d_a = nets
    opt_g = torch.optim.Adam(list(g_p.parameters()) + list(g_r.parameters()), lr=cfg.lr, betas=(0.5, 0.9))
    opt_d = torch.optim.Adam(list(d_l.parameters()) + list(d_a.parameters()), lr=cfg.lr, betas=(0.5, 0.9))
    gen = torch_generator(cfg.seed + 7)
    x_all = to_batch(imgs)
    history, last_good = [], _snapshot(nets)
    step = 0
    out_dir = Path(out_dir) if out_dir else None
    if out_dir:
        write_json(out_dir / "tcagan_config.json", {"config": config_dict(cfg), "config_hash": config_hash(cfg)})
    for epoch in range(cfg.epochs):
        for n in nets:
            n.train()
        perm = torch.randperm(len(x_all), generator=gen)
        for s in range(0, len(x_all), cfg.batch):
            xb = x_all[perm[s : s + cfg.batch]]
            for _ in range(cfg.critic_steps_per_gen_step):
                _critic_step(nets, opt_d, xb, cfg, gen)
            x_ext = None
            if cfg.cycle_mode == "bidirectional":
                x_ext = _pgd_regenerate(S, xb, cfg.eps, cfg.bidir_pgd_iters, gen)
            parts = generator_losses(S, nets, xb, cfg, x_ext)
            if not torch.isfinite(parts["total"]):
                _restore(nets, last_good)
                if out_dir:
                    save_tcagan(nets, out_dir / "tcagan.pt", cfg, substitute_hash)
                raise TrainingDiverged(f"TCA-GAN loss became non-finite at epoch {epoch}, step {step}")
            opt_g.zero_grad()
            parts["total"].backward()
            opt_g.step()
            history.append((step, parts["adv"].item(), parts["cyc"].item(), parts["disr"].item(), parts["total"].item()))
            step += 1
        last_good = _snapshot(nets)
        if history:
            log.info("tcagan epoch %d adv %.4f cyc %.5f disr %.4f", epoch, *history[-1][1:4])
    for k, v in S.state_dict().items():
        if not torch.equal(v, s_state[k]):
            raise RuntimeError("substitute weights changed during TCA-GAN training")
    for n in nets:
        n.eval()
    g_p.critics = (d_l, d_a)
    g_p.history = history
    if out_dir:
        write_csv(out_dir / "tcagan_losses.csv", ["step", "L_adv", "L_cyc", "L_disr", "total"], history)
        save_tcagan(nets, out_dir / "tcagan.pt", cfg, substitute_hash)
    return g_p, g_r


def _snapshot(nets):
    return [copy.deepcopy(n.state_dict()) for n in nets]


def _restore(nets, states):
    for n, s in zip(nets, states):
        n.load_state_dict(s)


def generate_perturbation(G_P, x):
    """One forward pass of ``G_P``; numpy image in gives a :class:`Perturbation`, tensors give tensors."""
    single = isinstance(x, np.ndarray)
    t = to_batch([x], dtype=next(G_P.parameters()).dtype) if single else x
    if t.ndim != 4 or t.shape[1] != G_P.arch_spec["in_channels"]:
        raise ValueError(f"expected NCHW input with {G_P.arch_spec['in_channels']} channels, got {tuple(t.shape)}")
    stride = 2 ** (len(G_P.arch_spec["channels"]) - 1)
    if t.shape[2] % stride or t.shape[3] % stride:
        raise ValueError(f"spatial size {tuple(t.shape[2:])} not divisible by {stride}")
    with torch.no_grad():
        r = G_P(t)
    if single:
        return Perturbation(r[0].permute(1, 2, 0).double().numpy(), G_P.output_bound)
    return r


def tcagan_attack(G_P, x):
    """Raw TCA-GAN adversarial example ``clip(x + G_P(x))`` (no post-regularization)."""
    r = generate_perturbation(G_P, x)
    if isinstance(r, Perturbation):
        return project(clip_image_range(x + r.data), x, G_P.output_bound)
    return project(clip_image_range(x + r), x, G_P.output_bound)


def save_tcagan(nets, path, cfg, substitute_hash=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = ("G_P", "G_R", "D_L", "D_A")
    torch.save(
        {
            "config": config_dict(cfg),
            "config_hash": config_hash(cfg),
            "substitute_hash": substitute_hash,
            "arch_specs": {k: n.arch_spec for k, n in zip(names, nets)},
            "state_dicts": {k: n.state_dict() for k, n in zip(names, nets)},
        },
        path,
    )
    return path


def load_tcagan(path):
    ckpt = torch.load(path, map_location="cpu", weights_only=False)
    cfg = TcaGanConfig(**ckpt["config"])
    nets = build_networks(cfg, ckpt["arch_specs"]["G_P"]["in_channels"])
    for k, n in zip(("G_P", "G_R", "D_L", "D_A"), nets):
        n.load_state_dict(ckpt["state_dicts"][k])
        n.eval()
    g_p, g_r, d_l, d_a = nets
    g_p.critics = (d_l, d_a)
    g_p.substitute_hash = ckpt.get("substitute_hash")
    return g_p, g_r, cfg
