import threading

import numpy as np
import pytest
import torch

from deepfake_disrupt.dataset import assign_splits, from_arrays
from deepfake_disrupt.deepfake import (
    BlackBoxHandle,
    DeepFakeConfig,
    DeepFakeModel,
    face_swap,
    load_deepfake,
    reconstruction_error,
    train_deepfake,
)
from deepfake_disrupt.evaluation import BlackBoxAuditError, TransformConfig, evaluate_disruption, read_report_csv
from deepfake_disrupt.evaluation import summary_table, write_reports
from deepfake_disrupt.synthetic import make_corpus

SMALL = dict(channels=(4, 8), bottleneck=0, decoder_channels=(8, 4), image_size=16, epochs=0)


def _model(**kw):
    torch.manual_seed(0)
    return DeepFakeModel(("a", "b"), DeepFakeConfig(**{**SMALL, **kw})).eval()


def test_identities_must_differ():
    with pytest.raises(ValueError, match="identities must differ"):
        DeepFakeModel(("a", "a"), DeepFakeConfig(**SMALL))


def test_swap_routes_to_other_decoder():
    m = _model()
    x = torch.rand(2, 3, 16, 16)
    with torch.no_grad():
        assert torch.equal(face_swap(m, x, "a"), m.decode(m.shared_encoder(x), "b"))
        assert torch.equal(face_swap(m, x, "b"), m.decode(m.shared_encoder(x), "a"))
    with pytest.raises(ValueError):
        face_swap(m, x, "c")


def test_untrained_output_range_and_determinism():
    for bottleneck in (0, 32):
        m = _model(bottleneck=bottleneck)
        x = torch.rand(3, 3, 16, 16)
        y = face_swap(m, x, "a")
        assert y.shape == x.shape and y.min() >= 0 and y.max() <= 1
        assert torch.equal(y, face_swap(m, x, "a"))


def test_handle_counts_queries_thread_safely():
    h = BlackBoxHandle.from_model(_model())
    x = torch.rand(2, 3, 16, 16)

    def work():
        for _ in range(10):
            h.swap(x, "a")

    ts = [threading.Thread(target=work) for _ in range(4)]
    for t in ts:
        t.start()
    for t in ts:
        t.join()
    assert h.query_counter == 80


def test_insufficient_identity_data():
    data = assign_splits(from_arrays(make_corpus(2, 20, size=16)))
    with pytest.raises(ValueError, match="insufficient identity data"):
        train_deepfake(data, "id0", "id1", DeepFakeConfig(**{**SMALL, "epochs": 1}))
    with pytest.raises(ValueError, match="identities must differ"):
        train_deepfake(data, "id0", "id0", DeepFakeConfig(**SMALL))


def test_training_learns_and_persists(tmp_path):
    data = assign_splits(from_arrays(make_corpus(2, 60, size=16, seed=3)))
    cfg = DeepFakeConfig(**{**SMALL, "epochs": 6, "channels": (8, 16), "decoder_channels": (16, 8)})
    m = train_deepfake(data, "id0", "id1", cfg, log_path=tmp_path / "l.csv", checkpoint_path=tmp_path / "df.pt")
    assert m.history[-1][1] < m.history[0][1]
    err = reconstruction_error(m, data.select("attack_eval", "id0"), "id0")
    assert 0 < err < 0.5
    m2 = load_deepfake(tmp_path / "df.pt")
    x = torch.rand(1, 3, 16, 16)
    assert torch.equal(face_swap(m, x, "id0"), face_swap(m2, x, "id0"))
    with pytest.raises(FileNotFoundError):
        load_deepfake(tmp_path / "missing.pt")


# ---------------------------------------------------------------- evaluation harness


def _pairs(n=4, size=32):
    rng = np.random.default_rng(0)
    xs = [rng.random((size, size, 3)) * 0.8 + 0.1 for _ in range(n)]
    return xs


def _handle():
    torch.manual_seed(0)
    cfg = DeepFakeConfig(channels=(4, 8), bottleneck=0, decoder_channels=(8, 4), image_size=32)
    return BlackBoxHandle.from_model(DeepFakeModel(("a", "b"), cfg).eval())


def test_identity_attack_gives_unit_scores():
    xs = _pairs()
    h = _handle()
    rep = evaluate_disruption(h, [(x, x, "a" if i % 2 else "b") for i, x in enumerate(xs)])
    for key in ("faceswap_ssim", "faceswap_fsim", "source_ssim", "source_fsim"):
        np.testing.assert_allclose(rep.column(key), 1.0, atol=1e-9)
    assert h.query_counter == 2 * len(xs)
    assert rep.metadata["queries"] == 2 * len(xs)


def test_audit_precondition():
    h = _handle()
    h.swap(torch.rand(1, 3, 32, 32), "a")
    with pytest.raises(BlackBoxAuditError):
        evaluate_disruption(h, [])


def test_violations_rejected_and_recorded():
    xs = _pairs(3)
    bad = np.clip(xs[1] + 0.05, 0, 1)
    rep = evaluate_disruption(_handle(), [(xs[0], xs[0], "a"), (xs[1], bad, "a"), (xs[2], xs[2], "b")])
    assert len(rep.rows) == 2
    assert [v["name"] for v in rep.violations] == ["00001"]


def test_transform_shared_between_clean_and_adv():
    # a transform drawn independently per branch would make identical inputs differ
    xs = _pairs(3)
    rep = evaluate_disruption(_handle(), [(x, x, "a") for x in xs], transform=TransformConfig(max_rotation=2.0))
    np.testing.assert_allclose(rep.column("faceswap_ssim"), 1.0, atol=1e-9)


def test_reports_reproducible_and_written(tmp_path):
    xs = _pairs(3)
    advs = [np.clip(x + np.random.default_rng(i).uniform(-0.03, 0.03, x.shape), 0, 1) for i, x in enumerate(xs)]
    pairs = [(x, a, "a") for x, a in zip(xs, advs)]
    r1 = evaluate_disruption(_handle(), pairs, seed=4, method="noise")
    r2 = evaluate_disruption(_handle(), pairs, seed=4, method="noise")
    out = write_reports([r1], tmp_path / "a")
    write_reports([r2], tmp_path / "b")
    assert (out / "report.csv").read_text() == (tmp_path / "b" / "report.csv").read_text()
    assert (out / "ssim_deltas.png").stat().st_size > 0
    assert "swap SSIM" in (out / "summary.txt").read_text()
    back = read_report_csv(out / "report_noise.csv")
    assert back.mean("faceswap_ssim") == pytest.approx(r1.mean("faceswap_ssim"), abs=1e-9)
    assert "noise" in summary_table([r1])
