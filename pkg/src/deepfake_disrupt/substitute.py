"""Face-reconstruction autoencoder used as the attack's substitute model."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .imagecore import to_batch, warp_batch
from .utils import config_dict, config_hash, torch_generator, write_csv

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class SubstituteConfig:
    channels: tuple = (32, 64, 128, 256)
    in_channels: int = 3
    epochs: int = 30
    lr: float = 2e-4
    batch: int = 32
    seed: int = 0
    val_fraction: float = 0.1
    max_rotation: float = 10.0
    max_scale: float = 0.05
    max_shift: float = 0.05


class SubstituteModel(nn.Module):
    """``S = S_d o S_e``: stride-2 conv encoder, mirrored transposed-conv decoder."""

    def __init__(self, channels=(32, 64, 128, 256), in_channels=3):
        super().__init__()
        channels = tuple(int(c) for c in channels)
        self.arch_spec = {"kind": "substitute_ae", "channels": list(channels), "in_channels": in_channels}
        enc, c_prev = [], in_channels
        for c in channels:
            enc += [nn.Conv2d(c_prev, c, 4, stride=2, padding=1), nn.LeakyReLU(0.2)]
            c_prev = c
        self.encoder = nn.Sequential(*enc)
        dec = []
        outs = list(reversed((in_channels,) + channels[:-1]))
        for i, c in enumerate(outs):
            dec.append(nn.ConvTranspose2d(c_prev, c, 4, stride=2, padding=1))
            dec.append(nn.Sigmoid() if i == len(outs) - 1 else nn.LeakyReLU(0.2))
            c_prev = c
        self.decoder = nn.Sequential(*dec)
        self.stride = 2 ** len(channels)

    def forward(self, x):
        return self.decoder(self.encoder(x))

    def check_input(self, x):
        if x.ndim != 4 or x.shape[1] != self.arch_spec["in_channels"]:
            raise ValueError(f"expected NCHW input with {self.arch_spec['in_channels']} channels, got {tuple(x.shape)}")
        if x.shape[2] % self.stride or x.shape[3] % self.stride:
            raise ValueError(f"spatial size {tuple(x.shape[2:])} not divisible by {self.stride}")


def _as_batch(m, x):
    single = isinstance(x, np.ndarray)
    t = to_batch([x], dtype=next(m.parameters()).dtype) if single else x
    m.check_input(t)
    return t, single


def encode(m, x):
    """Latent code ``S_e(x)``; numpy ``(H, W, C)`` in gives numpy ``(h, w, c)`` out."""
    t, single = _as_batch(m, x)
    z = m.encoder(t)
    return z[0].detach().permute(1, 2, 0).double().numpy() if single else z


def reconstruct(m, x):
    """``S(x) = S_d(S_e(x))`` with outputs in [0, 1]."""
    t, single = _as_batch(m, x)
    y = m(t)
    return y[0].detach().permute(1, 2, 0).double().numpy() if single else y


def recons_loss(m, x, x_hat):
    """Mean-reduced ``|S(x) - x| + |S(x_hat) - x_hat|``."""
    return (m(x) - x).abs().mean() + (m(x_hat) - x_hat).abs().mean()


def _val_split(n, frac, seed):
    order = np.random.default_rng(seed).permutation(n)
    n_val = int(round(n * frac)) if n > 1 else 0
    return order[n_val:], order[:n_val]


def train_substitute(data, cfg=None, log_path=None, checkpoint_path=None, images=None):
    """Train on the ``train_substitute`` split with one fresh warp per image per step."""
    cfg = cfg or SubstituteConfig()
    imgs = images if images is not None else data.select("train_substitute")
    if not imgs:
        raise ValueError("train_substitute split is empty")
    torch.manual_seed(cfg.seed)
    model = SubstituteModel(cfg.channels, cfg.in_channels)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=(0.5, 0.999))
    gen = torch_generator(cfg.seed + 1)
    x_all = to_batch(imgs)
    tr_idx, val_idx = _val_split(len(imgs), cfg.val_fraction, cfg.seed)
    x_tr, x_val = x_all[tr_idx], x_all[val_idx]
    history = []
    for epoch in range(cfg.epochs):
        model.train()
        perm = torch.randperm(len(x_tr), generator=gen)
        tot, nb = 0.0, 0
        for s in range(0, len(x_tr), cfg.batch):
            xb = x_tr[perm[s : s + cfg.batch]]
            xw = warp_batch(xb, gen, cfg.max_rotation, cfg.max_scale, cfg.max_shift)
            loss = recons_loss(model, xb, xw)
            if not torch.isfinite(loss):
                raise TrainingDiverged(f"substitute loss became {loss.item()} at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            tot += loss.item()
            nb += 1
        val = float("nan")
        if len(x_val):
            with torch.no_grad():
                val = recons_loss(model, x_val, warp_batch(x_val, torch_generator(cfg.seed + 2))).item()
        history.append((epoch, tot / max(nb, 1), val))
        log.info("substitute epoch %d train %.4f val %.4f", epoch, tot / max(nb, 1), val)
    model.eval()
    model.history = history
    if log_path:
        write_csv(log_path, ["epoch", "train_loss", "val_loss"], history)
    if checkpoint_path:
        save_substitute(model, checkpoint_path, cfg, opt)
    return model


def save_substitute(model, path, cfg, optimizer=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "arch_spec": model.arch_spec,
            "state_dict": model.state_dict(),
            "optimizer": optimizer.state_dict() if optimizer is not None else None,
            "config": config_dict(cfg),
            "config_hash": config_hash(cfg),
            "seed": cfg.seed,
        },
        path,
    )
    return path


def load_substitute(path):
    ckpt = torch.load(path, map_location="cpu", weights_only=False)
    spec = ckpt["arch_spec"]
    if spec.get("kind") != "substitute_ae":
        raise ValueError(f"{path} is not a substitute checkpoint")
    model = SubstituteModel(spec["channels"], spec["in_channels"])
    model.load_state_dict(ckpt["state_dict"])
    model.eval()
    model.config_hash = ckpt["config_hash"]
    return model


def freeze(model):
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    return model


def latent_shape(model, h, w):
    s = model.stride
    return (model.arch_spec["channels"][-1], h // s, w // s)


def moving_average(values, window=3):
    out = []
    for i in range(len(values)):
        chunk = [v for v in values[max(0, i - window + 1) : i + 1] if not math.isnan(v)]
        out.append(sum(chunk) / len(chunk) if chunk else float("nan"))
    return out
