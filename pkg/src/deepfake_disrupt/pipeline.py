"""End-to-end desk-scale runs: data, models, attacks, black-box evaluation, ablations.

All randomness derives from ``PipelineConfig.seed`` through named
substreams, so two variants of a run differ only in what the variant
changes.  The target model is trained with its own fixed seed: it plays
the part of a third-party model that the attacker's seed cannot touch.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .baselines import BaselineConfig, fgsm_attack, pgd_attack
from .dataset import assign_splits, from_arrays, load_corpus
from .deepfake import BlackBoxHandle, DeepFakeConfig, train_deepfake
from .evaluation import TransformConfig, evaluate_disruption, write_reports
from .imagecore import clip_image_range, from_batch, to_batch
from .postreg import PostRegConfig, post_regularize_batch
from .substitute import SubstituteConfig, freeze, train_substitute
from .synthetic import make_corpus
from .tcagan import TcaGanConfig, tcagan_attack, train_tcagan
from .utils import config_dict, config_hash, count_params, substream, version_string, write_json

log = logging.getLogger(__name__)

METHODS = ("ours", "tcagan", "pgd", "fgsm", "noise")


def _desk_substitute():
    return SubstituteConfig(epochs=40, lr=1e-3, batch=8)


@dataclass
class PipelineConfig:
    seed: int = 0
    corpus: str | None = None  # directory of identity folders; None for the synthetic corpus
    identities: tuple = ("id0", "id1")
    n_identities: int = 2
    images_per_identity: int = 200
    image_size: int = 64
    corpus_seed: int = 0
    fractions: tuple = (0.3, 0.2, 0.5)
    eval_limit: int | None = None
    substitute: SubstituteConfig = field(default_factory=_desk_substitute)
    deepfake: DeepFakeConfig = field(default_factory=DeepFakeConfig)
    tcagan: TcaGanConfig = field(default_factory=TcaGanConfig)
    postreg: PostRegConfig = field(default_factory=PostRegConfig)
    pgd: BaselineConfig = field(default_factory=BaselineConfig)
    fgsm: BaselineConfig = field(default_factory=lambda: BaselineConfig(method="fgsm"))
    transform: TransformConfig = field(default_factory=TransformConfig)

    def seeded(self):
        """Copy with every attacker-side seed derived from ``seed``."""
        return dataclasses.replace(
            self,
            substitute=dataclasses.replace(self.substitute, seed=substream(self.seed, "substitute")),
            tcagan=dataclasses.replace(self.tcagan, seed=substream(self.seed, "tcagan")),
        )


_SECTIONS = {
    "substitute": SubstituteConfig,
    "deepfake": DeepFakeConfig,
    "tcagan": TcaGanConfig,
    "postreg": PostRegConfig,
    "pgd": BaselineConfig,
    "fgsm": BaselineConfig,
    "transform": TransformConfig,
}


def config_from_dict(d, base=None):
    """Build a :class:`PipelineConfig` from nested dicts, overriding ``base`` field by field."""
    base = base or PipelineConfig()
    known = {f.name for f in dataclasses.fields(PipelineConfig)}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    kw = {}
    for k, v in d.items():
        if k in _SECTIONS:
            cur = getattr(base, k)
            fields = {f.name for f in dataclasses.fields(cur)}
            bad = set(v) - fields
            if bad:
                raise ValueError(f"unknown keys in [{k}]: {sorted(bad)}")
            vals = {**config_dict(cur), **v}
            kw[k] = _SECTIONS[k](**{a: tuple(b) if isinstance(b, list) else b for a, b in vals.items()})
        else:
            kw[k] = tuple(v) if isinstance(v, list) else v
    return dataclasses.replace(base, **kw)


def load_config(path, overrides=None):
    d = json.loads(Path(path).read_text()) if path else {}
    cfg = config_from_dict(d)
    if overrides:
        cfg = config_from_dict(overrides, cfg)
    return cfg


def freeze_config(cfg, out_dir, extra=None):
    """Write the fully resolved config plus version string next to a run's outputs."""
    payload = {
        "config": config_dict(cfg),
        "config_hash": config_hash(cfg),
        "version": version_string(),
        **(extra or {}),
    }
    return write_json(Path(out_dir) / "resolved_config.json", payload)


# ---------------------------------------------------------------- stages


def prepare_data(cfg):
    if cfg.corpus:
        data = load_corpus(cfg.corpus, (cfg.image_size, cfg.image_size))
    else:
        data = from_arrays(make_corpus(cfg.n_identities, cfg.images_per_identity, cfg.image_size, cfg.corpus_seed))
    if len(data.identities) < 2:
        raise ValueError("face swapping needs at least two identities")
    return assign_splits(data, cfg.fractions, cfg.corpus_seed)


def eval_pairs(data, cfg):
    """``(images, identities, names)`` of the evaluation split for the swapped identity pair."""
    rows = [r for r in data.select_with_labels("attack_eval") if r[1] in cfg.identities]
    if cfg.eval_limit:
        rows = rows[: cfg.eval_limit]
    return [r[0] for r in rows], [r[1] for r in rows], [f"{r[1]}/{r[2]}" for r in rows]


def train_target(data, cfg, out_dir=None):
    a, b = cfg.identities
    ckpt = Path(out_dir) / "target.pt" if out_dir else None
    return train_deepfake(data, a, b, cfg.deepfake, checkpoint_path=ckpt)


def uniform_noise(x, eps, seed):
    g = torch.Generator().manual_seed(int(seed))
    return clip_image_range(x + (torch.rand(x.shape, generator=g, dtype=x.dtype) * 2 - 1) * eps)


def run_attacks(S, G_P, x, cfg, methods=METHODS, use_postreg=True):
    """Adversarial batches for each requested method; none of these touch the target."""
    out, timings = {}, {}
    raw = None
    for m in methods:
        t0 = time.perf_counter()
        if m in ("ours", "tcagan"):
            if raw is None:
                raw = tcagan_attack(G_P, x)
            if m == "ours" and use_postreg:
                out[m] = post_regularize_batch(S, x, raw, cfg.postreg, substream(cfg.seed, "postreg"))[0]
            else:
                out[m] = raw
        elif m == "pgd":
            out[m] = pgd_attack(S, x, cfg.pgd, seed=substream(cfg.seed, "pgd"))
        elif m == "fgsm":
            out[m] = fgsm_attack(S, x, cfg.fgsm)
        elif m == "noise":
            out[m] = uniform_noise(x, cfg.postreg.eps, substream(cfg.seed, "noise"))
        else:
            raise ValueError(f"unknown method {m!r}")
        timings[m] = time.perf_counter() - t0
    return out, timings


def architecture_deltas(S, target):
    return {
        "substitute": {**S.arch_spec, "params": count_params(S), "activation": "LeakyReLU", "kernel": 4},
        "target": {**target.arch_spec, "params": count_params(target), "activation": "ELU", "kernel": 5},
    }


@dataclass
class RunResult:
    reports: dict
    query_count_after_attacks: int
    timings: dict
    adversarial: dict
    clean: torch.Tensor
    identities: list
    out_dir: Path | None = None
    substitute: object = None
    target: object = None
    generator: object = None
    data: object = None
    config: object = None


def run_pipeline(cfg, out_dir=None, methods=METHODS, target=None, substitute=None, data=None, eval_methods=None):
    """Train (or reuse) every model, attack the evaluation split and evaluate through the black box.

    ``target``/``substitute``/``data`` let callers share expensive stages
    across runs that do not vary them.
    """
    cfg = cfg.seeded()
    t_start = time.perf_counter()
    timings = {}
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
        freeze_config(cfg, out)
    data = data or prepare_data(cfg)

    t0 = time.perf_counter()
    if target is None:
        target = train_target(data, cfg, out)
    timings["target"] = time.perf_counter() - t0
    handle = BlackBoxHandle.from_model(target)

    t0 = time.perf_counter()
    if substitute is None:
        substitute = train_substitute(
            data, cfg.substitute, checkpoint_path=out / "substitute.pt" if out else None,
            log_path=out / "substitute_losses.csv" if out else None,
        )
    S = freeze(substitute)
    timings["substitute"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    g_p = None
    if any(m in ("ours", "tcagan") for m in methods):
        g_p, _ = train_tcagan(S, data, cfg.tcagan, out_dir=out, substitute_hash=config_hash(cfg.substitute))
    timings["tcagan"] = time.perf_counter() - t0

    imgs, idents, names = eval_pairs(data, cfg)
    x = to_batch(imgs)
    advs, attack_t = run_attacks(S, g_p, x, cfg, methods)
    timings.update({f"attack_{k}": v for k, v in attack_t.items()})
    queries = handle.query_counter
    if queries != 0:
        raise RuntimeError(f"attack generation queried the target {queries} times")

    reports = {}
    clean = from_batch(x)
    deltas = architecture_deltas(S, target)
    for m in eval_methods or methods:
        t0 = time.perf_counter()
        adv = from_batch(advs[m])
        handle = BlackBoxHandle.from_model(target)  # fresh handle: every evaluation starts from zero queries
        reports[m] = evaluate_disruption(
            handle,
            list(zip(clean, adv, idents)),
            eps=cfg.postreg.eps,
            seed=substream(cfg.seed, "transform"),
            method=m,
            names=names,
            transform=cfg.transform,
            arch_notes=deltas,
        )
        timings[f"eval_{m}"] = time.perf_counter() - t0
    timings["total"] = time.perf_counter() - t_start
    if out:
        write_reports(list(reports.values()), out)
        write_json(out / "timings.json", timings)
    return RunResult(reports, queries, timings, advs, x, idents, out, S, target, g_p, data, cfg)


# ---------------------------------------------------------------- ablations

# (cycle consistency, latent variable disruption, post-regularization) per row
COMPONENT_ROWS = {
    "row1_cc": (True, False, False),
    "row2_lvd": (False, True, False),
    "row3_prm": (False, False, True),
    "row4_cc_lvd": (True, True, False),
    "row5_lvd_prm": (False, True, True),
    "row6_cc_prm": (True, False, True),
    "row7_cc_lvd_prm": (True, True, True),
}
CYCLE_ROWS = {
    "no_cycle": {"cycle_mode": "none"},
    "bidirectional_cycle": {"cycle_mode": "bidirectional"},
    "unidirectional_cycle": {"cycle_mode": "unidirectional"},
}


def component_matrix():
    return [
        (name, {"tcagan": {"cycle_mode": "unidirectional" if cc else "none", "latent_disruption": lvd}, "postreg": prm})
        for name, (cc, lvd, prm) in COMPONENT_ROWS.items()
    ]


def cycle_matrix():
    return [(name, {"tcagan": v, "postreg": True}) for name, v in CYCLE_ROWS.items()]


def _variant_cfg(base, overrides):
    over = dict(overrides)
    use_postreg = over.pop("postreg", True)
    if isinstance(use_postreg, dict):
        over["postreg"] = use_postreg
        use_postreg = True
    return config_from_dict(over, base), bool(use_postreg)


def run_ablation(base, variants, seeds=(0,), out_dir=None, target=None, data=None):
    """One row per named variant with seed-mean metrics; failed variants are marked, not fatal.

    Variants sharing a TCA-GAN configuration reuse one training run per
    seed; the substitute and target are shared by all variants of a seed.
    """
    names = [n for n, _ in variants]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        raise ValueError(f"duplicate variant names: {dupes}")
    data = data or prepare_data(base)
    if target is None:
        target = train_target(data, base)
    per_variant = {n: [] for n in names}
    errors = {}
    for seed in seeds:
        seed_base = dataclasses.replace(base, seed=seed).seeded()
        S = freeze(train_substitute(data, seed_base.substitute))
        imgs, idents, vnames = eval_pairs(data, base)
        x = to_batch(imgs)
        clean = from_batch(x)
        cache = {}
        for name, overrides in variants:
            if name in errors:
                continue
            try:
                vcfg, use_postreg = _variant_cfg(dataclasses.replace(base, seed=seed), overrides)
                vcfg = vcfg.seeded()
                key = config_hash(vcfg.tcagan)
                if key not in cache:
                    cache[key] = train_tcagan(S, data, vcfg.tcagan)[0]
                advs, _ = run_attacks(S, cache[key], x, vcfg, ("ours",), use_postreg=use_postreg)
                handle = BlackBoxHandle.from_model(target)
                rep = evaluate_disruption(
                    handle, list(zip(clean, from_batch(advs["ours"]), idents)), eps=vcfg.postreg.eps,
                    seed=substream(vcfg.seed, "transform"), method=name, names=vnames, transform=vcfg.transform,
                )
                per_variant[name].append(rep)
            except Exception as exc:  # a failing variant must not sink the matrix
                log.exception("variant %s failed", name)
                errors[name] = f"{type(exc).__name__}: {exc}"
    rows = []
    for name in names:
        reps = per_variant[name]
        if name in errors:
            rows.append({"variant": name, "status": "failed", "error": errors[name]})
            continue
        row = {"variant": name, "status": "ok", "seeds": len(reps)}
        for key, col in (("faceswap_ssim", "ssim"), ("faceswap_fsim", "fsim"), ("brisque_adv_swap", "brisque")):
            vals = [r.mean(key) for r in reps]
            row[col] = float(np.mean(vals))
            row[f"{col}_per_seed"] = vals
        rows.append(row)
    if out_dir:
        write_ablation(rows, out_dir)
    return rows


def ablation_table(rows):
    lines = [f"{'variant':<24}{'SSIM':>9}{'FSIM':>9}{'BRISQUE':>10}  status"]
    for r in rows:
        if r["status"] == "ok":
            lines.append(f"{r['variant']:<24}{r['ssim']:>9.4f}{r['fsim']:>9.4f}{r['brisque']:>10.3f}  ok ({r['seeds']} seeds)")
        else:
            lines.append(f"{r['variant']:<24}{'-':>9}{'-':>9}{'-':>10}  failed: {r['error']}")
    return "\n".join(lines) + "\n"


def write_ablation(rows, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "ablation.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "status", "ssim", "fsim", "brisque", "seeds", "error"])
        for r in rows:
            w.writerow([r["variant"], r["status"], r.get("ssim", ""), r.get("fsim", ""), r.get("brisque", ""),
                        r.get("seeds", ""), r.get("error", "")])
    (out / "ablation.txt").write_text(ablation_table(rows))
    return out
