"""Toy DeepFake face swapper used as the held-out black-box target.

One shared encoder, one decoder per identity.  Training reconstructs each
identity through its own decoder; swapping decodes with the other one.
The architecture deliberately differs from :class:`SubstituteModel`
(5x5 kernels, a dense bottleneck, ELU activations and upsample+conv
decoders instead of transposed convolutions).
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass
from pathlib import Path

import torch
import torch.nn as nn
import torch.nn.functional as F

from .imagecore import to_batch, warp_batch
from .utils import config_dict, config_hash, torch_generator, write_csv

log = logging.getLogger(__name__)

MIN_IDENTITY_IMAGES = 20


@dataclass
class DeepFakeConfig:
    channels: tuple = (24, 48, 96)
    bottleneck: int = 256
    decoder_channels: tuple = (64, 48, 32)
    epochs: int = 30
    lr: float = 1e-3
    batch: int = 8
    seed: int = 1234
    image_size: int = 64
    max_rotation: float = 5.0
    max_scale: float = 0.03
    max_shift: float = 0.03


class _Decoder(nn.Module):
    def __init__(self, c_in, channels):
        super().__init__()
        layers, c = [], c_in
        for c_out in channels:
            layers += [nn.Upsample(scale_factor=2, mode="nearest"), nn.Conv2d(c, c_out, 3, padding=1), nn.ELU()]
            c = c_out
        layers += [nn.Conv2d(c, 3, 3, padding=1), nn.Sigmoid()]
        self.net = nn.Sequential(*layers)

    def forward(self, z):
        return self.net(z)


class DeepFakeModel(nn.Module):
    def __init__(self, identity_labels, cfg=None):
        super().__init__()
        cfg = cfg or DeepFakeConfig()
        a, b = identity_labels
        if a == b:
            raise ValueError("identities must differ")
        self.identity_labels = (a, b)
        self.arch_spec = {
            "kind": "deepfake_toy",
            "channels": list(cfg.channels),
            "bottleneck": cfg.bottleneck,
            "decoder_channels": list(cfg.decoder_channels),
            "image_size": cfg.image_size,
            "identity_labels": [a, b],
        }
        enc, c = [], 3
        for c_out in cfg.channels:
            enc += [nn.Conv2d(c, c_out, 5, stride=2, padding=2), nn.ELU()]
            c = c_out
        self.side = cfg.image_size // 2 ** len(cfg.channels)
        self.conv = nn.Sequential(*enc)
        flat = c * self.side * self.side
        if cfg.bottleneck:
            self.to_code = nn.Linear(flat, cfg.bottleneck)
            self.from_code = nn.Linear(cfg.bottleneck, flat)
        else:
            self.to_code = self.from_code = None
        self.code_channels = c
        self.decoders = nn.ModuleDict(
            {str(a): _Decoder(c, cfg.decoder_channels), str(b): _Decoder(c, cfg.decoder_channels)}
        )

    def shared_encoder(self, x):
        h = self.conv(x)
        if self.to_code is None:
            return h
        z = self.from_code(self.to_code(h.flatten(1)))
        return F.elu(z).view(-1, self.code_channels, self.side, self.side)

    def decode(self, z, identity):
        return self.decoders[str(identity)](z)

    def other(self, identity):
        a, b = self.identity_labels
        if identity == a:
            return b
        if identity == b:
            return a
        raise ValueError(f"unknown identity {identity!r}; model swaps {a!r} and {b!r}")

    def forward(self, x, identity):
        return self.decode(self.shared_encoder(x), identity)


def face_swap(m, x, source_identity):
    """Decode ``x`` (NCHW) with the decoder of the identity it is *not*."""
    target = m.other(source_identity)
    with torch.no_grad():
        return m(x, target)


class BlackBoxHandle:
    """Opaque swap oracle that counts every query made through it."""

    def __init__(self, swap_fn, description=""):
        self._swap = swap_fn
        self._lock = threading.Lock()
        self._count = 0
        self.description = description

    @classmethod
    def from_model(cls, model):
        return cls(lambda x, ident: face_swap(model, x, ident), description=str(model.arch_spec))

    @property
    def query_counter(self):
        return self._count

    def swap(self, x, source_identity):
        n = x.shape[0] if x.ndim == 4 else 1
        with self._lock:
            self._count += n
        return self._swap(x, source_identity)


def train_deepfake(data, id_a, id_b, cfg=None, log_path=None, checkpoint_path=None):
    """Train on the non-evaluation images of both identities."""
    cfg = cfg or DeepFakeConfig()
    if id_a == id_b:
        raise ValueError("identities must differ")
    per_id = {}
    for ident in (id_a, id_b):
        if ident not in data.identities:
            raise ValueError(f"identity {ident!r} not in dataset")
        imgs = data.select("train_substitute", ident) + data.select("train_tcagan", ident)
        if len(imgs) < MIN_IDENTITY_IMAGES:
            raise ValueError(f"insufficient identity data for {ident!r}: {len(imgs)} < {MIN_IDENTITY_IMAGES}")
        per_id[ident] = to_batch(imgs)
    torch.manual_seed(cfg.seed)
    model = DeepFakeModel((id_a, id_b), cfg)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=(0.5, 0.999))
    gen = torch_generator(cfg.seed + 1)
    history = []
    for epoch in range(cfg.epochs):
        model.train()
        perms = {k: torch.randperm(len(v), generator=gen) for k, v in per_id.items()}
        n_steps = max(len(v) for v in per_id.values()) // cfg.batch
        tot = 0.0
        for s in range(n_steps):
            loss = 0.0
            for ident, x in per_id.items():
                idx = perms[ident][(torch.arange(cfg.batch) + s * cfg.batch) % len(x)]
                xb = warp_batch(x[idx], gen, cfg.max_rotation, cfg.max_scale, cfg.max_shift)
                loss = loss + (model(xb, ident) - xb).abs().mean()
            if not torch.isfinite(loss):
                raise RuntimeError(f"deepfake loss became non-finite at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            tot += loss.item()
        history.append((epoch, tot / max(n_steps, 1)))
        log.info("deepfake epoch %d loss %.4f", epoch, tot / max(n_steps, 1))
    model.eval()
    model.history = history
    if log_path:
        write_csv(log_path, ["epoch", "train_loss"], history)
    if checkpoint_path:
        save_deepfake(model, checkpoint_path, cfg)
    return model


def reconstruction_error(model, images, identity):
    """Mean L1 of own-identity reconstruction."""
    x = to_batch(images)
    with torch.no_grad():
        return (model(x, identity) - x).abs().mean().item()


def save_deepfake(model, path, cfg):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "arch_spec": model.arch_spec,
            "config": config_dict(cfg),
            "config_hash": config_hash(cfg),
            "state_dict": model.state_dict(),
        },
        path,
    )
    return path


def load_deepfake(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"target checkpoint not found: {path}")
    ckpt = torch.load(path, map_location="cpu", weights_only=False)
    if ckpt["arch_spec"].get("kind") != "deepfake_toy":
        raise ValueError(f"{path} is not a DeepFake checkpoint")
    cfg = DeepFakeConfig(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in ckpt["config"].items()})
    model = DeepFakeModel(tuple(ckpt["arch_spec"]["identity_labels"]), cfg)
    model.load_state_dict(ckpt["state_dict"])
    model.eval()
    return model
