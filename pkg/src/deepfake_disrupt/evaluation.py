"""Black-box transfer evaluation: swap clean and adversarial faces, compare the outputs.

This is the only place the target's :class:`BlackBoxHandle` is queried.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .imagecore import from_batch, realism_transform, to_batch
from .iqa import brisque, fsim, metric_metadata, ssim
from .utils import version_string, write_json

log = logging.getLogger(__name__)

COLUMNS = [
    "method",
    "name",
    "identity",
    "linf",
    "faceswap_ssim",
    "faceswap_fsim",
    "brisque_clean_swap",
    "brisque_adv_swap",
    "source_ssim",
    "source_fsim",
]
METRICS = COLUMNS[4:]
EPS_TOL = 1e-6


class BlackBoxAuditError(RuntimeError):
    """The target was queried before evaluation began."""


@dataclass
class TransformConfig:
    enabled: bool = True
    max_rotation: float = 2.0
    max_shift: float = 0.02
    resize_factor: float = 1.25


@dataclass
class DisruptionReport:
    method: str
    rows: list
    violations: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def column(self, key):
        return np.array([r[key] for r in self.rows], dtype=np.float64)

    def mean(self, key):
        if not self.rows:
            return float("nan")
        return float(self.column(key).mean())

    @property
    def means(self):
        return {k: self.mean(k) for k in METRICS}

    def write_csv(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, COLUMNS)
            w.writeheader()
            for r in self.rows:
                w.writerow({k: (f"{r[k]:.10f}" if isinstance(r[k], float) else r[k]) for k in COLUMNS})
        return path


def _check_pair(x, x_adv, eps):
    if x.shape != x_adv.shape:
        return f"shape mismatch {x.shape} vs {x_adv.shape}"
    if not np.all(np.isfinite(x_adv)):
        return "non-finite values"
    linf = float(np.max(np.abs(x_adv - x))) if x.size else 0.0
    if linf > eps + EPS_TOL:
        return f"linf {linf:.6g} exceeds eps {eps}"
    if x_adv.min() < 0 or x_adv.max() > 1:
        return "outside [0, 1]"
    return None


def _swap_all(handle, xs, identities, transform, seed):
    """Transform then swap every image; one identical transform per index."""
    x = to_batch(xs)
    if transform.enabled:
        # a fresh generator per call so clean and adversarial batches see the same draws
        rng = np.random.default_rng(seed)
        x = realism_transform(x, rng, transform.max_rotation, transform.max_shift, transform.resize_factor)
    out = torch.empty_like(x)
    for ident in dict.fromkeys(identities):
        idx = [i for i, v in enumerate(identities) if v == ident]
        out[idx] = handle.swap(x[idx], ident)
    return from_batch(out)


def evaluate_disruption(handle, pairs, eps=0.03, seed=0, method="ours", names=None, transform=None, arch_notes=None):
    """Per-image face-swap and source quality for ``(x, x_adv, identity)`` pairs.

    Pairs violating the eps-ball or the image range are rejected and listed
    in ``report.violations``; the rest are evaluated.
    """
    if handle.query_counter != 0:
        raise BlackBoxAuditError(
            f"target was queried {handle.query_counter} times before evaluation; restricted black-box contract broken"
        )
    transform = transform or TransformConfig()
    names = names or [f"{i:05d}" for i in range(len(pairs))]
    kept, violations = [], []
    for name, (x, x_adv, ident) in zip(names, pairs):
        x, x_adv = np.asarray(x, np.float64), np.asarray(x_adv, np.float64)
        why = _check_pair(x, x_adv, eps)
        if why:
            log.warning("rejecting %s: %s", name, why)
            violations.append({"name": name, "reason": why})
        else:
            kept.append((name, x, x_adv, ident))
    rows = []
    if kept:
        xs = [k[1] for k in kept]
        advs = [k[2] for k in kept]
        idents = [k[3] for k in kept]
        df_clean = _swap_all(handle, xs, idents, transform, seed)
        df_adv = _swap_all(handle, advs, idents, transform, seed)
        for (name, x, x_adv, ident), a, b in zip(kept, df_clean, df_adv):
            rows.append(
                {
                    "method": method,
                    "name": name,
                    "identity": ident,
                    "linf": float(np.max(np.abs(x_adv - x))),
                    "faceswap_ssim": ssim(a, b),
                    "faceswap_fsim": fsim(a, b),
                    "brisque_clean_swap": brisque(a),
                    "brisque_adv_swap": brisque(b),
                    "source_ssim": ssim(x, x_adv),
                    "source_fsim": fsim(x, x_adv),
                }
            )
    meta = {
        "eps": eps,
        "transform": vars(transform),
        "transform_seed": seed,
        "metrics": metric_metadata(),
        "target": getattr(handle, "description", ""),
        "queries": handle.query_counter,
        "version": version_string(),
    }
    if arch_notes:
        meta["architecture_deltas"] = arch_notes
    return DisruptionReport(method, rows, violations, meta)


def summary_table(reports):
    """Text tables in the reference (SSIM/FSIM) and no-reference (BRISQUE) layouts."""
    lines = ["Reference image quality (mean)", ""]
    lines.append(f"{'method':<16}{'swap SSIM':>11}{'swap FSIM':>11}{'src SSIM':>11}{'src FSIM':>11}{'n':>6}")
    for r in reports:
        m = r.means
        lines.append(
            f"{r.method:<16}{m['faceswap_ssim']:>11.4f}{m['faceswap_fsim']:>11.4f}"
            f"{m['source_ssim']:>11.4f}{m['source_fsim']:>11.4f}{len(r.rows):>6d}"
        )
    lines += ["", "No-reference image quality (mean BRISQUE, lower is better)", ""]
    lines.append(f"{'method':<16}{'clean swap':>12}{'adv swap':>12}")
    for r in reports:
        m = r.means
        lines.append(f"{r.method:<16}{m['brisque_clean_swap']:>12.3f}{m['brisque_adv_swap']:>12.3f}")
    bad = [(r.method, v) for r in reports for v in r.violations]
    if bad:
        lines += ["", f"constraint violations: {len(bad)}"]
        lines += [f"  {m}: {v['name']} ({v['reason']})" for m, v in bad]
    return "\n".join(lines) + "\n"


def plot_ssim_deltas(reports, path):
    """Histogram of ``1 - face-swap SSIM`` per method."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for r in reports:
        if r.rows:
            ax.hist(1 - r.column("faceswap_ssim"), bins=30, alpha=0.5, label=r.method)
    ax.set_xlabel("1 - SSIM(DF(x), DF(x_adv))")
    ax.set_ylabel("images")
    ax.legend()
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def write_reports(reports, out_dir):
    """CSV per method, combined CSV, summary text, histogram and metadata."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    combined = DisruptionReport("all", [row for r in reports for row in r.rows])
    combined.write_csv(out / "report.csv")
    for r in reports:
        r.write_csv(out / f"report_{r.method}.csv")
    (out / "summary.txt").write_text(summary_table(reports))
    plot_ssim_deltas(reports, out / "ssim_deltas.png")
    write_json(out / "report_meta.json", {r.method: {**r.metadata, "violations": r.violations} for r in reports})
    return out


def read_report_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k in ["linf", *METRICS]:
            r[k] = float(r[k])
    method = rows[0]["method"] if rows else "unknown"
    return DisruptionReport(method, rows)
