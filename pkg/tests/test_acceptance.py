"""Acceptance gate: each shipped claim checked at its stated tolerance.

Criteria 1-3 are property checks and run in seconds.  Criteria 4-6 share one
session fixture that drives the command-line interface end to end: a synthetic
dataset (seed 1, 256 train / 64 val, 64x64) and six 60-epoch trainings in
single-thread subprocesses — expect ~35 minutes of wall time on one core the
first time a protocol test runs.

Every test finishes by printing one PASS line with the measured numbers
(visible under ``pytest -s``).
"""

import os
import subprocess
import sys
import time

import numpy as np
import pytest

from rgbdseg.losses import ce_loss, total_loss
from rgbdseg.metrics import (
    ConfusionMatrix,
    accumulate_confusion,
    compute_metrics,
    parse_report,
)
from rgbdseg.mim import mim_forward, mim_init
from rgbdseg.network import NetConfig, init_net, net_forward
from rgbdseg.ops import Conv2dParams, adaptive_avg_pool2d, conv2d
from rgbdseg.pam import pam_forward, pam_init
from rgbdseg.selftest import THRESHOLD, run_selftest
from rgbdseg.tensor import Tensor

ORACLE_TOL = 1e-10
ORACLE_SEEDS = range(5)


def _pass(criterion, message):
    print(f"PASS criterion {criterion}: {message}")


def _rel(got, want):
    return np.max(np.abs(got - want)) / max(np.max(np.abs(want)), 1e-30)


# ---------------------------------------------------------------------------
# criterion 1: gradient integrity


def test_criterion_1_gradient_integrity():
    t0 = time.perf_counter()
    results, ok = run_selftest(log=lambda s: None)
    wall = time.perf_counter() - t0
    worst_name, worst = max(((n, e) for n, e, _ in results), key=lambda r: r[1])
    assert ok, f"worst component {worst_name} at {worst:.3e} >= {THRESHOLD:g}"
    assert wall < 120.0, f"selftest took {wall:.1f}s, budget 120s"
    _pass(1, f"{len(results)} components, worst {worst_name} at {worst:.3e} "
             f"< {THRESHOLD:g}, {wall:.1f}s < 120s")


# ---------------------------------------------------------------------------
# criterion 2: oracle equivalence


def _conv_oracle(x, w, b, stride, pad):
    n, cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((n, cout, ho, wo))
    for bi in range(n):
        for co in range(cout):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0 if b is None else b[co]
                    for ci in range(cin):
                        for u in range(k):
                            for v in range(k):
                                acc += xp[bi, ci, i * stride + u, j * stride + v] \
                                    * w[co, ci, u, v]
                    out[bi, co, i, j] = acc
    return out


def _pool_oracle(x, oh, ow):
    n, c, h, w = x.shape
    out = np.zeros((n, c, oh, ow))
    for i in range(oh):
        rlo, rhi = (i * h) // oh, -((-(i + 1) * h) // oh)
        for j in range(ow):
            clo, chi = (j * w) // ow, -((-(j + 1) * w) // ow)
            out[:, :, i, j] = x[:, :, rlo:rhi, clo:chi].mean(axis=(2, 3))
    return out


def _attention_oracle(fr, fd, weights, heads):
    n, c, h, w = fr.shape
    T, dk = h * w, c // heads

    def toks(f):
        t = np.zeros((n, T, c))
        for b in range(n):
            for i in range(h):
                for j in range(w):
                    t[b, i * w + j] = f[b, :, i, j]
        return t

    def proj(t, wm):
        out = np.zeros_like(t)
        for b in range(n):
            for s in range(T):
                for o in range(c):
                    out[b, s, o] = sum(t[b, s, i] * wm[i, o] for i in range(c))
        return out

    def attend(q, k, v):
        out = np.zeros((n, T, c))
        for b in range(n):
            for hd in range(heads):
                lo = hd * dk
                for s in range(T):
                    scores = np.array([
                        sum(q[b, s, lo + j] * k[b, u, lo + j] for j in range(dk))
                        / np.sqrt(dk)
                        for u in range(T)])
                    e = np.exp(scores - scores.max())
                    wts = e / e.sum()
                    for j in range(dk):
                        out[b, s, lo + j] = sum(
                            wts[u] * v[b, u, lo + j] for u in range(T))
        return out

    def maps(t):
        f = np.zeros((n, c, h, w))
        for b in range(n):
            for i in range(h):
                for j in range(w):
                    f[b, :, i, j] = t[b, i * w + j]
        return f

    wq_r, wk_r, wv_r, wq_d, wk_d, wv_d = weights
    tr, td = toks(fr), toks(fd)
    ar = attend(proj(tr, wq_r), proj(td, wk_d), proj(tr, wv_r))
    ad = attend(proj(td, wq_d), proj(tr, wk_r), proj(td, wv_d))
    r4 = maps(ar) + fr
    d4 = maps(ad) + fd
    return r4, d4, r4 + d4


def _confusion_oracle(pred, truth, k, ignore=255):
    cm = np.zeros((k, k), dtype=np.int64)
    for t, p in zip(truth.ravel(), pred.ravel()):
        if t != ignore:
            cm[t, p] += 1
    return cm


def _metrics_oracle(counts):
    ious = []
    for c in range(counts.shape[0]):
        inter = counts[c, c]
        union = counts[c, :].sum() + counts[:, c].sum() - inter
        if union:
            ious.append(inter / union)
    return sum(ious) / len(ious), np.trace(counts) / counts.sum()


def test_criterion_2_conv2d_oracle():
    worst = 0.0
    for seed in ORACLE_SEEDS:
        rng = np.random.default_rng(seed)
        x = Tensor(rng.standard_normal((2, 3, 6, 6)))
        p = Conv2dParams(Tensor(rng.standard_normal((4, 3, 3, 3))),
                         Tensor(rng.standard_normal(4)))
        for stride in (1, 2):
            got = conv2d(x, p, stride=stride).data
            want = _conv_oracle(x.data, p.w.data, p.b.data, stride, 1)
            worst = max(worst, _rel(got, want))
    assert worst <= ORACLE_TOL
    _pass(2, f"conv2d vs naive loops, 5 seeds x 2 strides, worst rel {worst:.2e}")


def test_criterion_2_adaptive_pool_oracle():
    worst = 0.0
    for seed in ORACLE_SEEDS:
        rng = np.random.default_rng(seed)
        x = Tensor(rng.standard_normal((2, 3, 7, 9)))
        for out_hw in ((2, 2), (3, 4), (7, 9)):
            got = adaptive_avg_pool2d(x, out_hw).data
            want = _pool_oracle(x.data, *out_hw)
            worst = max(worst, _rel(got, want))
    assert worst <= ORACLE_TOL
    _pass(2, f"adaptive_avg_pool2d vs naive windows, 5 seeds, worst rel {worst:.2e}")


def test_criterion_2_attention_oracle():
    c, heads, hw = 8, 2, (2, 2)  # T = 4 tokens
    worst = 0.0
    for seed in ORACLE_SEEDS:
        rng = np.random.default_rng(seed)
        p = mim_init(rng, c, heads=heads, dtype=np.float64)
        fr = Tensor(rng.standard_normal((2, c, *hw)))
        fd = Tensor(rng.standard_normal((2, c, *hw)))
        got = mim_forward(fr, fd, p)
        weights = tuple(lp.w.data for lp in (p.wq_rgb, p.wk_rgb, p.wv_rgb,
                                             p.wq_dep, p.wk_dep, p.wv_dep))
        want = _attention_oracle(fr.data, fd.data, weights, heads)
        for g, w in zip(got, want):
            worst = max(worst, _rel(g.data, w))
    assert worst <= ORACLE_TOL
    _pass(2, f"cross-attention (c=8, heads=2, T=4) vs naive loops, "
             f"5 seeds, worst rel {worst:.2e}")


def test_criterion_2_confusion_and_metrics_oracle():
    worst = 0.0
    for seed in ORACLE_SEEDS:
        rng = np.random.default_rng(seed)
        k = int(rng.integers(2, 6))
        truth = rng.integers(0, k, size=(3, 8, 8)).astype(np.int64)
        truth[rng.random(truth.shape) < 0.1] = 255
        pred = rng.integers(0, k, size=(3, 8, 8)).astype(np.int64)
        cm = ConfusionMatrix.zeros(k)
        accumulate_confusion(pred, truth, cm)
        want_cm = _confusion_oracle(pred, truth, k)
        assert np.array_equal(cm.counts, want_cm)
        rep = compute_metrics(cm)
        want_miou, want_pa = _metrics_oracle(want_cm.astype(np.float64))
        worst = max(worst, abs(rep.miou - want_miou) / max(want_miou, 1e-30))
        worst = max(worst, abs(rep.pixel_acc - want_pa) / max(want_pa, 1e-30))
    assert worst <= ORACLE_TOL
    _pass(2, f"confusion/mIoU/PA vs naive loops, 5 seeds, worst rel {worst:.2e}")


# ---------------------------------------------------------------------------
# criterion 3: closed forms


def test_criterion_3_uniform_logit_loss():
    worst = 0.0
    for k in (2, 4, 7):
        rng = np.random.default_rng(k)
        logits = Tensor(np.zeros((2, k, 4, 4)))
        y = rng.integers(0, k, size=(2, 4, 4)).astype(np.int64)
        worst = max(worst, abs(float(ce_loss(logits, y).data) - np.log(k)))
    assert worst <= 1e-9
    _pass(3, f"uniform-logit loss = ln K, worst abs dev {worst:.2e} <= 1e-9")


def test_criterion_3_init_loss_four_log_k():
    cfg = NetConfig(num_classes=4, base_channels=8)
    rng = np.random.default_rng(1)
    params = init_net(cfg, rng)
    rgb = Tensor(rng.random((2, 3, 64, 64), dtype=np.float64).astype(np.float32))
    dep = Tensor(rng.random((2, 1, 64, 64), dtype=np.float64).astype(np.float32))
    y = rng.integers(0, 4, size=(2, 64, 64)).astype(np.int64)
    out = net_forward(rgb, dep, params, cfg, training=True)
    loss = float(total_loss(out, y).data)
    target = 4 * np.log(4)
    assert abs(loss - target) <= 0.15 * target
    _pass(3, f"initialization total loss {loss:.4f} within 15% of 4 ln 4 = {target:.4f}")


def test_criterion_3_pam_zero_parameters():
    rng = np.random.default_rng(0)
    p = pam_init(rng, 4, dtype=np.float64)
    p.conv.w.data[...] = 0.0
    p.conv.b.data[...] = 0.0
    f = Tensor(rng.standard_normal((2, 4, 5, 5)))
    out, gate = pam_forward(f, p)
    assert np.array_equal(gate.data, np.full_like(gate.data, 0.5))
    assert np.array_equal(out.data, 1.5 * f.data)
    _pass(3, "zero-parameter channel gate returns exactly 1.5x its input")


def test_criterion_3_mim_zero_value_projection():
    rng = np.random.default_rng(0)
    p = mim_init(rng, 8, heads=2, dtype=np.float64)
    p.wv_rgb.w.data[...] = 0.0
    p.wv_dep.w.data[...] = 0.0
    fr = Tensor(rng.standard_normal((2, 8, 2, 2)))
    fd = Tensor(rng.standard_normal((2, 8, 2, 2)))
    r4, d4, fused = mim_forward(fr, fd, p)
    assert np.array_equal(r4.data, fr.data)
    assert np.array_equal(d4.data, fd.data)
    assert np.array_equal(fused.data, fr.data + fd.data)
    _pass(3, "zero-value-projection attention passes both inputs through exactly")


def test_criterion_3_metrics_hand_case():
    cm = ConfusionMatrix(np.array([[2, 1], [1, 4]], dtype=np.int64))
    rep = compute_metrics(cm)
    assert abs(rep.miou - 7.0 / 12.0) <= 1e-12
    assert abs(rep.pixel_acc - 0.75) <= 1e-12
    _pass(3, f"cm=[[2,1],[1,4]] -> mIoU {rep.miou:.6f} (7/12), acc {rep.pixel_acc}")


# ---------------------------------------------------------------------------
# criteria 4-6: the synthetic training protocol


@pytest.fixture(scope="session")
def protocol(tmp_path_factory):
    root = tmp_path_factory.mktemp("protocol")
    env = dict(os.environ, OPENBLAS_NUM_THREADS="1", OMP_NUM_THREADS="1")

    def run(*args):
        t0 = time.perf_counter()
        r = subprocess.run([sys.executable, "-m", "rgbdseg.cli", *args],
                           capture_output=True, text=True, env=env)
        assert r.returncode == 0, f"{args[0]} failed:\n{r.stderr}"
        return time.perf_counter() - t0

    run("synth", "--out", str(root / "data"), "--seed", "1",
        "--count", "256", "--val-count", "64", "--size", "64")
    common = ["--data", str(root / "data"), "--seed", "1", "--base-channels", "8"]
    walls = {}
    for name, extra in [
        ("full", []),
        ("full_rerun", []),
        ("baseline", ["--disable-pam", "--disable-mim"]),
        ("rgb_only", ["--rgb-only"]),
        ("pam_only", ["--disable-mim"]),
        ("mim_only", ["--disable-pam"]),
    ]:
        walls[name] = run("train", *common, "--ckpt", str(root / name), *extra)

    def metrics(name):
        return parse_report((root / name / "metrics.txt").read_text())

    return {"root": root, "walls": walls, "metrics": metrics}


def test_criterion_4_fusion_gap(protocol):
    full = protocol["metrics"]("full")
    base = protocol["metrics"]("baseline")
    rgb = protocol["metrics"]("rgb_only")
    gap = full.miou - base.miou
    slowest = max(protocol["walls"].values())
    summary = (f"full {full.miou:.4f}, baseline {base.miou:.4f}, gap {gap:+.4f} "
               f"(need >= +0.10); fused IoU 1/2 = {full.per_class_iou[1]:.3f}/"
               f"{full.per_class_iou[2]:.3f} (need >= 0.6); rgb-only IoU 1/2 = "
               f"{rgb.per_class_iou[1]:.3f}/{rgb.per_class_iou[2]:.3f} "
               f"(need <= 0.45); slowest run {slowest:.0f}s (budget 900s)")
    bounds = [gap >= 0.10, slowest < 900.0]
    for c in (1, 2):
        bounds += [full.per_class_iou[c] >= 0.6, rgb.per_class_iou[c] <= 0.45]
    assert all(bounds), summary
    _pass(4, summary)


def test_criterion_5_ablation_ordering(protocol):
    base = protocol["metrics"]("baseline").miou
    pam = protocol["metrics"]("pam_only").miou
    mim = protocol["metrics"]("mim_only").miou
    full = protocol["metrics"]("full").miou
    summary = (f"baseline {base:.4f}, gate-only {pam:.4f}, attention-only "
               f"{mim:.4f}, full {full:.4f} (need baseline < each single "
               f"module < full, strictly)")
    assert base < pam < full and base < mim < full, summary
    _pass(5, summary)


def test_criterion_6_deterministic_rerun(protocol):
    root = protocol["root"]
    a = (root / "full" / "metrics.txt").read_bytes()
    b = (root / "full_rerun" / "metrics.txt").read_bytes()
    assert a == b, "rerun metrics documents differ"
    _pass(6, f"identical rerun reproduced metrics.txt byte-for-byte ({len(a)} bytes)")
