"""Command-line entry point: ``deepfake-disrupt <command> ...``.

Every command that produces artifacts writes ``resolved_config.json``
(fully resolved config, its hash and the code version) into its output
directory.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from . import __version__
from .baselines import fgsm_attack, pgd_attack
from .dataset import assign_splits, load_corpus, read_manifest, split_sizes, write_manifest
from .deepfake import BlackBoxHandle, load_deepfake, train_deepfake
from .evaluation import evaluate_disruption, write_reports
from .pipeline import (
    ablation_table,
    component_matrix,
    cycle_matrix,
    freeze_config,
    load_config,
    run_ablation,
    run_pipeline,
)
from .postreg import post_regularize_batch
from .substitute import freeze, load_substitute, train_substitute
from .synthetic import write_corpus
from .tcagan import load_tcagan, tcagan_attack, train_tcagan
from .utils import substream, write_csv, write_json

log = logging.getLogger("deepfake_disrupt")


class CliError(Exception):
    pass


def _overrides(args):
    over = {}
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    return over


def _cfg(args):
    return load_config(args.config, _overrides(args)).seeded()


def _dataset(args, cfg):
    data = load_corpus(args.corpus, (cfg.image_size, cfg.image_size))
    return read_manifest(data, args.manifest)


# ---------------------------------------------------------------- image folders


def _read_folder(root):
    """``root/<identity>/<file>.png`` -> sorted list of (relative name, identity, image)."""
    root = Path(root)
    if not root.is_dir():
        raise CliError(f"image directory not found: {root}")
    items = []
    for d in sorted(p for p in root.iterdir() if p.is_dir()):
        for f in sorted(p for p in d.iterdir() if p.suffix.lower() == ".png"):
            with Image.open(f) as im:
                items.append((f"{d.name}/{f.name}", d.name, np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0))
    return items


def _save_png(path, img):
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.round(np.clip(img, 0, 1) * 255).astype(np.uint8)).save(path)


def _quantize_in_ball(x, x_adv, eps):
    """8-bit version of ``x_adv`` that stays inside the eps-ball of the 8-bit ``x``."""
    x8 = np.round(x * 255)
    step = np.floor(eps * 255 + 1e-9)
    adv8 = np.clip(np.round(x_adv * 255), x8 - step, x8 + step)
    return np.clip(adv8, 0, 255) / 255.0


# ---------------------------------------------------------------- commands


def cmd_prepare(args):
    cfg = load_config(args.config, _overrides(args))
    if args.synthetic:
        corpus_dir = Path(args.out) / "corpus"
        write_corpus(corpus_dir, cfg.n_identities, cfg.images_per_identity, cfg.image_size, cfg.corpus_seed)
    elif args.data_dir:
        corpus_dir = Path(args.data_dir)
    else:
        raise CliError("give --data-dir or --synthetic")
    data = load_corpus(corpus_dir, (cfg.image_size, cfg.image_size))
    if len(data.identities) < 2:
        raise CliError(f"face-swap training needs two identities, corpus has {len(data.identities)}")
    assign_splits(data, cfg.fractions, cfg.corpus_seed)
    manifest = write_manifest(data, Path(args.out) / "manifest.csv")
    freeze_config(cfg, args.out, {"corpus": str(corpus_dir)})
    sizes = split_sizes(data)
    for k, v in sizes.items():
        print(f"{k}: {v}")
    print(f"manifest: {manifest}")
    return 0


def cmd_train_substitute(args):
    cfg = _cfg(args)
    data = _dataset(args, cfg)
    out = Path(args.out)
    freeze_config(cfg, out)
    m = train_substitute(data, cfg.substitute, out / "substitute_losses.csv", out / "substitute.pt")
    print(f"substitute: {out / 'substitute.pt'} (final val L1 {m.history[-1][2]:.4f})" if m.history else "substitute saved")
    return 0


def cmd_train_deepfake(args):
    cfg = _cfg(args)
    data = _dataset(args, cfg)
    out = Path(args.out)
    freeze_config(cfg, out)
    a, b = cfg.identities
    train_deepfake(data, a, b, cfg.deepfake, out / "target_losses.csv", out / "target.pt")
    print(f"target: {out / 'target.pt'}")
    return 0


def cmd_train_tcagan(args):
    cfg = _cfg(args)
    data = _dataset(args, cfg)
    S = load_substitute(args.substitute)
    out = Path(args.out)
    freeze_config(cfg, out, {"substitute_hash": S.config_hash})
    train_tcagan(S, data, cfg.tcagan, out_dir=out, substitute_hash=S.config_hash)
    print(f"tcagan: {out / 'tcagan.pt'}")
    return 0


def cmd_attack(args):
    cfg = _cfg(args)
    S = freeze(load_substitute(args.substitute))
    out = Path(args.out)
    items = _read_folder(args.images)
    freeze_config(cfg, out, {"method": _method_name(args)})
    if not items:
        log.warning("no images found in %s; nothing to do", args.images)
        return 0
    x = torch.as_tensor(np.stack([it[2] for it in items]).transpose(0, 3, 1, 2), dtype=torch.float32)
    if args.baseline == "pgd":
        adv = pgd_attack(S, x, cfg.pgd, seed=substream(cfg.seed, "pgd"))
        eps = cfg.pgd.eps
    elif args.baseline == "fgsm":
        adv = fgsm_attack(S, x, cfg.fgsm)
        eps = cfg.fgsm.eps
    else:
        if not args.tcagan:
            raise CliError("--tcagan is required unless --baseline is given")
        g_p, _, tcfg = load_tcagan(args.tcagan)
        if g_p.substitute_hash != S.config_hash:
            raise CliError(
                f"checkpoint mismatch: TCA-GAN was trained against substitute {g_p.substitute_hash}, got {S.config_hash}"
            )
        adv = tcagan_attack(g_p, x)
        eps = tcfg.eps
        if not args.no_postreg:
            adv = post_regularize_batch(S, x, adv, cfg.postreg, substream(cfg.seed, "postreg"))[0]
            eps = cfg.postreg.eps
    adv = adv.detach().double().numpy().transpose(0, 2, 3, 1)
    rows = []
    for (name, ident, img), a in zip(items, adv):
        q = _quantize_in_ball(img, a, eps)
        _save_png(out / "images" / name, q)
        rows.append((name, ident, float(np.abs(a - img).max()), float(np.abs(q - img).max())))
    write_csv(out / "perturbation_stats.csv", ["name", "identity", "linf", "linf_8bit"], rows)
    # the attack process never loads the target, so no query can have happened
    write_json(out / "audit.json", {"target_queries": 0, "method": _method_name(args)})
    print(f"{len(rows)} adversarial images -> {out / 'images'}")
    return 0


def _method_name(args):
    if getattr(args, "baseline", None):
        return args.baseline
    return "tcagan" if getattr(args, "no_postreg", False) else "ours"


def cmd_evaluate(args):
    cfg = _cfg(args)
    if not Path(args.target).exists():
        raise CliError(f"target checkpoint not found: {args.target}")
    target = load_deepfake(args.target)
    clean = {n: (i, x) for n, i, x in _read_folder(args.clean)}
    adv = {n: (i, x) for n, i, x in _read_folder(args.adv)}
    missing = sorted(set(clean) ^ set(adv))
    if missing:
        raise CliError("unmatched filenames: " + ", ".join(missing))
    names = sorted(clean)
    handle = BlackBoxHandle.from_model(target)
    rep = evaluate_disruption(
        handle,
        [(clean[n][1], adv[n][1], clean[n][0]) for n in names],
        eps=args.eps,
        seed=substream(cfg.seed, "transform"),
        method=args.method,
        names=names,
        transform=cfg.transform,
    )
    out = Path(args.out)
    freeze_config(cfg, out)
    write_reports([rep], out)
    audit_src = Path(args.adv).parent / "audit.json"
    audit = json.loads(audit_src.read_text()) if audit_src.exists() else {}
    write_json(out / "audit.json", {"attack_phase_queries": audit.get("target_queries"), "evaluation_queries": handle.query_counter})
    print((out / "summary.txt").read_text())
    print(f"black-box audit: attack-phase target queries = {audit.get('target_queries', 'unknown')}")
    return 0


def cmd_ablate(args):
    cfg = load_config(args.config, _overrides(args))
    if args.matrix:
        spec = json.loads(Path(args.matrix).read_text())
        variants = [(v["name"], v.get("overrides", {})) for v in spec["variants"]]
    elif args.preset == "components":
        variants = component_matrix()
    else:
        variants = cycle_matrix()
    seeds = [int(s) for s in args.seeds.split(",")]
    out = Path(args.out)
    freeze_config(cfg, out, {"variants": variants, "seeds": seeds})
    rows = run_ablation(cfg, variants, seeds, out_dir=out)
    print(ablation_table(rows))
    return 0


def cmd_run(args):
    cfg = load_config(args.config, _overrides(args))
    res = run_pipeline(cfg, args.out)
    print((Path(args.out) / "summary.txt").read_text())
    print(f"target queries during attack generation: {res.query_count_after_attacks}")
    return 0


# ---------------------------------------------------------------- parser


def build_parser():
    p = argparse.ArgumentParser(prog="deepfake-disrupt", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True):
        sp.add_argument("--config", help="JSON config file (defaults are used for missing keys)")
        sp.add_argument("--seed", type=int, help="top-level seed override")
        sp.add_argument("--out", required=True, help="output directory")
        if data:
            sp.add_argument("--corpus", required=True, help="corpus directory (identity subfolders)")
            sp.add_argument("--manifest", required=True, help="split manifest from 'prepare'")

    sp = sub.add_parser("prepare", help="write the split manifest (optionally a synthetic corpus)")
    common(sp, data=False)
    sp.add_argument("--data-dir")
    sp.add_argument("--synthetic", action="store_true")
    sp.set_defaults(func=cmd_prepare)

    sp = sub.add_parser("train-substitute", help="train the substitute autoencoder")
    common(sp)
    sp.set_defaults(func=cmd_train_substitute)

    sp = sub.add_parser("train-deepfake", help="train the toy face-swap target (evaluation only)")
    common(sp)
    sp.set_defaults(func=cmd_train_deepfake)

    sp = sub.add_parser("train-tcagan", help="train the perturbation generators against a substitute")
    common(sp)
    sp.add_argument("--substitute", required=True)
    sp.set_defaults(func=cmd_train_tcagan)

    sp = sub.add_parser("attack", help="write adversarial PNGs for a folder of faces")
    common(sp, data=False)
    sp.add_argument("--substitute", required=True)
    sp.add_argument("--tcagan")
    sp.add_argument("--images", required=True, help="folder with identity subfolders of PNGs")
    sp.add_argument("--no-postreg", action="store_true")
    sp.add_argument("--baseline", choices=["fgsm", "pgd"])
    sp.set_defaults(func=cmd_attack)

    sp = sub.add_parser("evaluate", help="swap clean and adversarial faces through the target and report")
    common(sp, data=False)
    sp.add_argument("--target", required=True)
    sp.add_argument("--clean", required=True)
    sp.add_argument("--adv", required=True)
    sp.add_argument("--method", default="ours")
    sp.add_argument("--eps", type=float, default=0.03)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("ablate", help="run a matrix of variants and tabulate them")
    common(sp, data=False)
    g = sp.add_mutually_exclusive_group()
    g.add_argument("--matrix", help="JSON file: {'variants': [{'name': ..., 'overrides': {...}}]}")
    g.add_argument("--preset", choices=["components", "cycle"], default="components")
    sp.add_argument("--seeds", default="0")
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("run", help="full desk-scale pipeline in one process")
    common(sp, data=False)
    sp.set_defaults(func=cmd_run)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CliError, ValueError, FileNotFoundError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
