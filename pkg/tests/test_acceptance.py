"""Acceptance suite: one printed PASS/FAIL line per criterion.

Criteria 1, 2, 6-10 share the cached desk-scale runs in ``tests/desk.py``
(roughly ten minutes of CPU in total). Criteria 3-5 are fast oracle checks.
"""

import json
import math
from pathlib import Path

import numpy as np
import pytest
import torch

from deepfake_disrupt.imagecore import clip_image_range
from deepfake_disrupt.iqa import brisque, fsim, ssim
from deepfake_disrupt.postreg import postreg_objective
from deepfake_disrupt.substitute import recons_loss
from deepfake_disrupt.tcagan import generator_losses, loss_adv, loss_cyc, loss_disr, total_loss
from deepfake_disrupt.utils import count_params

from . import desk
from .conftest import tiny_substitute, tiny_tcagan
from .oracles import fsim_definition, mean_abs, ssim_bruteforce, to_np

FIX = Path(__file__).parent / "fixtures"
EPS = 0.03


def report(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'} | {detail}")


def seed_mean(fn):
    return float(np.mean([fn(s) for s in desk.SEEDS]))


def swap_ssim(run, method):
    return run.reports[method].mean("faceswap_ssim")


# ---------------------------------------------------------------- 1, 2


def test_criterion_1_constraints_and_runtime(capsys):
    run = desk.main_run()
    x = run.clean.numpy()
    adv = run.adversarial["ours"].numpy()
    n = adv.shape[0]
    linf = np.abs(adv - x).reshape(n, -1).max(axis=1)
    in_ball = linf <= EPS + 1e-6
    in_range = (adv.reshape(n, -1).min(axis=1) >= 0) & (adv.reshape(n, -1).max(axis=1) <= 1)
    t = run.timings
    runtime = t["target"] + t["substitute"] + t["tcagan"] + t["attack_ours"] + t["eval_ours"]
    ok = n == 200 and bool(in_ball.all()) and bool(in_range.all()) and runtime < 300
    report(
        capsys, 1, ok,
        f"n={n}, in ball {int(in_ball.sum())}/{n} (max linf {linf.max():.6f}), "
        f"in [0,1] {int(in_range.sum())}/{n}, train+attack+eval runtime {runtime:.1f}s < 300s",
    )
    assert ok


def test_criterion_2_black_box_audit(capsys):
    run = desk.main_run()
    evaluated = {m: r.metadata["queries"] for m, r in run.reports.items()}
    ok = run.query_count_after_attacks == 0 and set(evaluated) >= {"ours", "fgsm", "pgd"}
    report(
        capsys, 2, ok,
        f"queries after generating {sorted(run.adversarial)}: {run.query_count_after_attacks}; "
        f"evaluation queries per method {evaluated}",
    )
    assert ok


# ---------------------------------------------------------------- 3


def _oracle_disr(S, x, xa):
    total = 0.0
    for i in range(x.shape[0]):
        lat = mean_abs(to_np(S.encoder(x[i : i + 1])), to_np(S.encoder(xa[i : i + 1])))
        pix = mean_abs(to_np(S(x[i : i + 1])), to_np(S(xa[i : i + 1])))
        total += math.exp(-lat) + math.exp(-pix)
    return total / x.shape[0]


def _oracle_adv(d_l, d_a, g_r, x, xa):
    total = 0.0
    for i in range(x.shape[0]):
        xi, ai = x[i : i + 1], xa[i : i + 1]
        cleaned = ai - g_r(ai)
        total += float(d_l(ai)) - float(d_l(xi)) + float(d_a(cleaned)) - float(d_a(ai))
    return total / x.shape[0]


def _oracle_postreg(S, x_radv, x_rec, W, x):
    out = []
    for i in range(x.shape[0]):
        diff = to_np(S.encoder(x_radv[i : i + 1]) - S.encoder(x_rec[i : i + 1])).ravel()
        w = to_np(W[i]).ravel()
        num = sum(float(a) * float(b) for a, b in zip(diff, w))
        norm = math.sqrt(sum(float(v) ** 2 for v in to_np(x[i]).ravel()))
        out.append(num / norm)
    return out


def test_criterion_3_loss_oracles(capsys):
    worst = {k: 0.0 for k in ("loss_disr", "loss_cyc", "loss_adv", "total_loss", "postreg_objective")}
    for inst in range(50):
        g = torch.Generator().manual_seed(1000 + inst)
        S = tiny_substitute(inst)
        lam_c, lam_d = (float(v) for v in torch.rand(2, generator=g, dtype=torch.float64) * 10)
        cfg, (g_p, g_r, d_l, d_a) = tiny_tcagan(inst, lambda_cyc=lam_c, lambda_disr=lam_d)
        x = torch.rand(2, 1, 8, 8, generator=g, dtype=torch.float64)
        with torch.no_grad():
            r = g_p(x)
            xa = clip_image_range(x + r)
            parts = generator_losses(S, (g_p, g_r, d_l, d_a), x, cfg)
            disr, cyc, adv = _oracle_disr(S, x, xa), mean_abs(to_np(g_r(xa)), to_np(r)), _oracle_adv(d_l, d_a, g_r, x, xa)
            errs = {
                "loss_disr": abs(loss_disr(S, x, xa).item() - disr),
                "loss_cyc": abs(loss_cyc(g_p, g_r, x).item() - cyc),
                "loss_adv": abs(loss_adv(d_l, d_a, g_r, x, xa).item() - adv),
                "total_loss": abs(total_loss(cfg, parts).item() - (adv + lam_c * cyc + lam_d * disr)),
            }
            x_radv = clip_image_range(xa + 0.01 * (2 * torch.rand(x.shape, generator=g, dtype=x.dtype) - 1))
            x_rec = S(x)
            W = torch.randn(S.encoder(x).shape, generator=g, dtype=x.dtype)
            got = postreg_objective(S, x_radv, x_rec, W, x)
            expect = _oracle_postreg(S, x_radv, x_rec, W, x)
            errs["postreg_objective"] = max(abs(a - b) for a, b in zip(got.tolist(), expect))
        for k, v in errs.items():
            worst[k] = max(worst[k], v)
    ok = all(v <= 1e-6 for v in worst.values())
    report(capsys, 3, ok, "50 instances, max abs error " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + " (tol 1e-6)")
    assert ok


# ---------------------------------------------------------------- 4


def _fd_check(params, loss_fn, h=1e-5):
    """Worst relative error of every parameter entry against central differences."""
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params)
    worst = 0.0
    with torch.no_grad():
        for p, gr in zip(params, grads):
            flat, gflat = p.view(-1), gr.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + h
                up = loss_fn().item()
                flat[i] = orig - h
                down = loss_fn().item()
                flat[i] = orig
                fd = (up - down) / (2 * h)
                a = gflat[i].item()
                scale = max(abs(a), abs(fd))
                if scale > 1e-7:  # entries with no gradient signal carry no relative information
                    worst = max(worst, abs(a - fd) / scale)
    return worst


def test_criterion_4_gradient_checks(capsys):
    g = torch.Generator().manual_seed(7)
    x = 0.1 + 0.8 * torch.rand(2, 1, 8, 8, generator=g, dtype=torch.float64)
    x_hat = 0.1 + 0.8 * torch.rand(2, 1, 8, 8, generator=g, dtype=torch.float64)

    m = tiny_substitute(5)
    e_recons = _fd_check(list(m.parameters()), lambda: recons_loss(m, x, x_hat))

    S = tiny_substitute(6)
    for p in S.parameters():
        p.requires_grad_(False)
    cfg, nets = tiny_tcagan(6, lambda_cyc=10.0, lambda_disr=1.0)
    gen_params = list(nets[0].parameters()) + list(nets[1].parameters())
    e_total = _fd_check(gen_params, lambda: generator_losses(S, nets, x, cfg)["total"])

    x_rec = S(x).detach()
    W = torch.randn(S.encoder(x).shape, generator=g, dtype=x.dtype)
    x_radv = (x + 0.01 * torch.randn(x.shape, generator=g, dtype=x.dtype)).requires_grad_(True)
    e_post = _fd_check([x_radv], lambda: postreg_objective(S, x_radv, x_rec, W, x).sum())

    n_sub, n_gen = count_params(m), sum(p.numel() for p in gen_params)
    ok = max(e_recons, e_total, e_post) <= 1e-3 and n_sub <= 1000 and n_gen <= 1000
    report(
        capsys, 4, ok,
        f"max rel error recons {e_recons:.1e} ({n_sub} params), total {e_total:.1e} ({n_gen} generator params), "
        f"postreg wrt x_radv {e_post:.1e} (tol 1e-3)",
    )
    assert ok


# ---------------------------------------------------------------- 5


def test_criterion_5_iqa_oracles(capsys):
    z = np.load(FIX / "iqa_pairs.npz")
    pairs = list(zip(z["refs"], z["tests"]))
    e_ssim = max(abs(ssim(a, b) - ssim_bruteforce(a, b)) for a, b in pairs)
    e_fsim = max(abs(fsim(a, b) - fsim_definition(a, b)) for a, b in pairs)
    e_id = max(max(abs(ssim(a, a) - 1), abs(fsim(a, a) - 1)) for a, _ in pairs)
    imgs = np.load(FIX / "brisque_images.npz")
    golden = json.loads((FIX / "brisque_golden.json").read_text())
    e_br = max(abs(brisque(imgs[k]) - v) for k, v in golden.items())
    ok = len(pairs) == 20 and e_ssim <= 1e-4 and e_fsim <= 1e-4 and e_id <= 1e-9 and e_br <= 1e-6
    report(
        capsys, 5, ok,
        f"{len(pairs)} pairs: ssim err {e_ssim:.1e}, fsim err {e_fsim:.1e} (tol 1e-4); identity err {e_id:.1e} (tol 1e-9); "
        f"brisque golden err {e_br:.1e} over {len(golden)} images (tol 1e-6)",
    )
    assert ok


# ---------------------------------------------------------------- 6


def test_criterion_6a_beats_uniform_noise(capsys):
    run = desk.main_run()
    ours, noise = swap_ssim(run, "ours"), swap_ssim(run, "noise")
    wall = run.timings["total"]
    ok = noise - ours >= 0.05 and wall < 45 * 60
    report(
        capsys, "6a", ok,
        f"face-swap SSIM ours {ours:.4f}, uniform noise {noise:.4f}, gap {noise - ours:.4f} (need >= 0.05); wall {wall:.0f}s",
    )
    assert ok


def test_criterion_6b_table_ordering(capsys):
    run = desk.main_run()
    ours, pgd, fgsm = (swap_ssim(run, m) for m in ("ours", "pgd", "fgsm"))
    detail = f"seed 0: ours {ours:.4f}, PGD {pgd:.4f}, FGSM {fgsm:.4f}"
    if pgd > fgsm:
        ours, pgd, fgsm = (seed_mean(lambda s, m=m: swap_ssim(desk.seed_run(s), m)) for m in ("ours", "pgd", "fgsm"))
        detail += f"; PGD/FGSM inverted, 3-seed mean: ours {ours:.4f}, PGD {pgd:.4f}, FGSM {fgsm:.4f}"
    direction = ours < pgd < fgsm
    margins = (pgd - ours, fgsm - pgd)
    ok = direction and min(margins) >= 0.01
    detail += f"; direction {'holds' if direction else 'fails'}, margins {margins[0]:.4f}/{margins[1]:.4f} (need >= 0.01)"
    report(capsys, "6b", ok, detail)
    assert ok


# ---------------------------------------------------------------- 7, 8


def test_criterion_7_postreg_ablation(capsys):
    per_seed = [(swap_ssim(desk.seed_run(s), "tcagan"), swap_ssim(desk.seed_run(s), "ours")) for s in desk.SEEDS]
    without, with_ = np.mean([a for a, _ in per_seed]), np.mean([b for _, b in per_seed])
    ok = without - with_ >= 0.005
    report(
        capsys, 7, ok,
        f"3-seed mean face-swap SSIM without postreg {without:.4f}, with {with_:.4f}, reduction {without - with_:.4f} "
        f"(need >= 0.005); per seed " + ", ".join(f"{a:.4f}->{b:.4f}" for a, b in per_seed),
    )
    assert ok


def test_criterion_8_cycle_ablation(capsys):
    per_seed = [(swap_ssim(desk.seed_run(s), "ours"), swap_ssim(desk.no_cycle_run(s), "ours")) for s in desk.SEEDS]
    uni, none = np.mean([a for a, _ in per_seed]), np.mean([b for _, b in per_seed])
    ok = uni <= none
    report(
        capsys, 8, ok,
        f"3-seed mean face-swap SSIM unidirectional {uni:.4f} vs no cycle {none:.4f}; per seed "
        + ", ".join(f"{a:.4f}/{b:.4f}" for a, b in per_seed),
    )
    assert ok


# ---------------------------------------------------------------- 9, 10


def test_criterion_9_brisque_direction(capsys):
    rep = desk.main_run().reports["ours"]
    clean, adv = rep.mean("brisque_clean_swap"), rep.mean("brisque_adv_swap")
    ok = adv > clean
    report(capsys, 9, ok, f"mean BRISQUE clean swaps {clean:.3f}, disrupted swaps {adv:.3f}")
    assert ok


def test_criterion_10_determinism(capsys):
    a = (desk.main_run().out_dir / "report.csv").read_bytes()
    b = (desk.repeat_run().out_dir / "report.csv").read_bytes()
    ok = a == b
    report(capsys, 10, ok, f"two independent seed-0 runs: report.csv byte-identical={ok} ({len(a)} bytes; tolerance 0)")
    assert ok


@pytest.fixture(autouse=True, scope="module")
def _torch_threads():
    torch.set_num_threads(1)
    yield
