"""Finite-difference audit of every differentiable component.

Each entry builds a small float64 problem, wraps it in a scalar objective, and
runs ``grad_check`` (central differences, eps 1e-4).  A component passes when
its worst relative error stays under ``THRESHOLD``; the driver prints one line
per component and the worst offender decides the exit code.

Outputs are weighted by fixed random constants before summing so that no
coordinate has a structurally zero gradient (plain sums make e.g. softmax and
batch-norm gradients vanish identically, which would check nothing).
"""

from __future__ import annotations

import time

import numpy as np

from .losses import ce_loss, total_loss
from .mim import mim_forward, mim_init
from .network import NetConfig, init_net, named_arrays, net_forward
from .ops import (
    adaptive_avg_pool2d,
    batch_norm,
    bn_init,
    conv2d,
    conv_init,
    linear,
    linear_init,
    log_softmax,
    max_pool_global,
    softmax,
    upsample,
)
from .pam import pam_forward, pam_fuse, pam_pair_init
from .tensor import Tensor, grad_check

THRESHOLD = 1e-4


def _t(rng, *shape):
    return Tensor(rng.standard_normal(shape))


def _weight(rng, out):
    return rng.standard_normal(out.shape)


def _simple(builder):
    """builder(rng) -> (inputs dict, objective over that dict)."""
    def run():
        rng = np.random.default_rng(2024)
        inputs, f = builder(rng)
        return grad_check(f, inputs)
    return run


def _check_add(rng):
    a, b = _t(rng, 3, 4), _t(rng, 4)
    r = rng.standard_normal((3, 4))
    return {"a": a, "b": b}, lambda ts: ((ts["a"] + ts["b"]) * r).sum()


def _check_sub(rng):
    a, b = _t(rng, 2, 3), _t(rng, 2, 3)
    r = rng.standard_normal((2, 3))
    return {"a": a, "b": b}, lambda ts: ((ts["a"] - ts["b"]) * r).sum()


def _check_mul(rng):
    a, b = _t(rng, 3, 1, 4), _t(rng, 2, 1)
    r = rng.standard_normal((3, 2, 4))
    return {"a": a, "b": b}, lambda ts: ((ts["a"] * ts["b"]) * r).sum()


def _check_div(rng):
    a = _t(rng, 3, 4)
    b = Tensor(rng.random((3, 4)) + 0.5)
    r = rng.standard_normal((3, 4))
    return {"a": a, "b": b}, lambda ts: ((ts["a"] / ts["b"]) * r).sum()


def _check_matmul(rng):
    a, b = _t(rng, 2, 3, 4), _t(rng, 2, 4, 5)
    r = rng.standard_normal((2, 3, 5))
    return {"a": a, "b": b}, lambda ts: ((ts["a"] @ ts["b"]) * r).sum()


def _check_relu(rng):
    a = _t(rng, 4, 5)
    r = rng.standard_normal((4, 5))
    return {"a": a}, lambda ts: (ts["a"].relu() * r).sum()


def _check_sigmoid(rng):
    a = _t(rng, 4, 5)
    r = rng.standard_normal((4, 5))
    return {"a": a}, lambda ts: (ts["a"].sigmoid() * r).sum()


def _check_exp_log(rng):
    a = Tensor(rng.random((3, 4)) + 0.5)
    r = rng.standard_normal((3, 4))
    return {"a": a}, lambda ts: ((ts["a"].exp().log() * r).sum()
                                 + (ts["a"].log() * r).sum())


def _check_pow(rng):
    a = Tensor(rng.random((3, 4)) + 0.5)
    r = rng.standard_normal((3, 4))
    return {"a": a}, lambda ts: (ts["a"].pow(3) * r).sum()


def _check_reductions(rng):
    a = _t(rng, 3, 4, 5)
    r0 = rng.standard_normal((4, 5))
    r1 = rng.standard_normal((3, 5))
    return {"a": a}, lambda ts: ((ts["a"].sum(axes=0) * r0).sum()
                                 + (ts["a"].mean(axes=1) * r1).sum()
                                 + ts["a"].max(axes=2).sum())


def _check_reshape_permute(rng):
    a = _t(rng, 2, 3, 4)
    r = rng.standard_normal((4, 6))
    return {"a": a}, lambda ts: ((ts["a"].permute(2, 0, 1).reshape(4, 6)) * r).sum()


def _check_conv2d(rng):
    x = _t(rng, 2, 3, 6, 6)
    p = conv_init(rng, 4, 3, 3, bias=True, dtype=np.float64)
    r = rng.standard_normal((2, 4, 6, 6))
    return ({"x": x, "w": p.w, "b": p.b},
            lambda ts: (conv2d(ts["x"], p) * r).sum())


def _check_conv2d_strided(rng):
    x = _t(rng, 1, 2, 7, 7)
    p = conv_init(rng, 3, 2, 3, bias=True, dtype=np.float64)
    r = rng.standard_normal((1, 3, 4, 4))
    return ({"x": x, "w": p.w, "b": p.b},
            lambda ts: (conv2d(ts["x"], p, stride=2) * r).sum())


def _check_conv2d_1x1(rng):
    x = _t(rng, 2, 4, 5, 5)
    p = conv_init(rng, 2, 4, 1, bias=True, dtype=np.float64)
    r = rng.standard_normal((2, 2, 5, 5))
    return ({"x": x, "w": p.w, "b": p.b},
            lambda ts: (conv2d(ts["x"], p) * r).sum())


def _check_batch_norm_train(rng):
    x = _t(rng, 4, 3, 5, 5)
    p = bn_init(3, dtype=np.float64)
    p.gamma.data += 0.3 * rng.standard_normal(3)
    p.beta.data += 0.3 * rng.standard_normal(3)
    r = rng.standard_normal((4, 3, 5, 5))

    def f(ts):
        q = bn_init(3, dtype=np.float64)
        q.gamma, q.beta = ts["gamma"], ts["beta"]
        return (batch_norm(ts["x"], q, training=True) * r).sum()

    return {"x": x, "gamma": p.gamma, "beta": p.beta}, f


def _check_batch_norm_eval(rng):
    x = _t(rng, 2, 3, 4, 4)
    p = bn_init(3, dtype=np.float64)
    p.running_mean += rng.standard_normal(3) * 0.2
    p.running_var += rng.random(3) * 0.5
    r = rng.standard_normal((2, 3, 4, 4))
    return ({"x": x, "gamma": p.gamma, "beta": p.beta},
            lambda ts: (batch_norm(ts["x"], p, training=False) * r).sum())


def _check_linear(rng):
    x = _t(rng, 5, 4)
    p = linear_init(rng, 4, 3, bias=True, dtype=np.float64)
    r = rng.standard_normal((5, 3))
    return ({"x": x, "w": p.w, "b": p.b},
            lambda ts: (linear(ts["x"], p) * r).sum())


def _check_softmax(rng):
    x = _t(rng, 3, 6)
    r = rng.standard_normal((3, 6))
    return {"x": x}, lambda ts: (softmax(ts["x"]) * r).sum()


def _check_log_softmax(rng):
    x = _t(rng, 3, 6)
    r = rng.standard_normal((3, 6))
    return {"x": x}, lambda ts: (log_softmax(ts["x"]) * r).sum()


def _check_adaptive_avg_pool2d(rng):
    x = _t(rng, 2, 3, 7, 5)
    r = rng.standard_normal((2, 3, 2, 2))
    return {"x": x}, lambda ts: (adaptive_avg_pool2d(ts["x"], (2, 2)) * r).sum()


def _check_upsample_nearest(rng):
    x = _t(rng, 1, 3, 4, 4)
    r = rng.standard_normal((1, 3, 8, 8))
    return {"x": x}, lambda ts: (upsample(ts["x"], 2, mode="nearest") * r).sum()


def _check_upsample_bilinear(rng):
    x = _t(rng, 1, 3, 4, 4)
    r = rng.standard_normal((1, 3, 8, 8))
    return {"x": x}, lambda ts: (upsample(ts["x"], 2, mode="bilinear") * r).sum()


def _check_max_pool_global(rng):
    x = _t(rng, 2, 4, 5, 5)
    r = rng.standard_normal((2, 4, 1, 1))
    return {"x": x}, lambda ts: (max_pool_global(ts["x"]) * r).sum()


def _check_pam_forward(rng):
    f_map = _t(rng, 2, 4, 4, 4)
    pair = pam_pair_init(rng, 4, shared=False, dtype=np.float64)
    r = rng.standard_normal((2, 4, 4, 4))
    return ({"f": f_map, "w": pair.rgb.conv.w, "b": pair.rgb.conv.b},
            lambda ts: (pam_forward(ts["f"], pair.rgb)[0] * r).sum())


def _check_pam_fuse(rng):
    f_rgb, f_dep = _t(rng, 1, 4, 4, 4), _t(rng, 1, 4, 4, 4)
    pair = pam_pair_init(rng, 4, shared=False, dtype=np.float64)
    r = rng.standard_normal((1, 4, 4, 4))
    ts = {"f_rgb": f_rgb, "f_dep": f_dep,
          "w_r": pair.rgb.conv.w, "b_r": pair.rgb.conv.b,
          "w_d": pair.dep.conv.w, "b_d": pair.dep.conv.b}
    return ts, lambda ts: (pam_fuse(ts["f_rgb"], ts["f_dep"], pair) * r).sum()


def _check_mim_forward(rng):
    c, heads = 8, 2
    f_rgb, f_dep = _t(rng, 1, c, 2, 2), _t(rng, 1, c, 2, 2)
    p = mim_init(rng, c, heads, dtype=np.float64)
    r = rng.standard_normal((1, c, 2, 2))
    ts = {"f_rgb": f_rgb, "f_dep": f_dep,
          "wq_r": p.wq_rgb.w, "wk_r": p.wk_rgb.w, "wv_r": p.wv_rgb.w,
          "wq_d": p.wq_dep.w, "wk_d": p.wk_dep.w, "wv_d": p.wv_dep.w}

    def f(ts):
        _, _, fused = mim_forward(ts["f_rgb"], ts["f_dep"], p)
        return (fused * r).sum()

    return ts, f


def _check_ce_loss(rng):
    logits = _t(rng, 2, 3, 4, 4)
    y = rng.integers(0, 3, size=(2, 4, 4))
    y[0, 0, :2] = 255  # a few IGNORE pixels
    return {"logits": logits}, lambda ts: ce_loss(ts["logits"], y)


def _check_total_loss(rng):
    shapes = [(1, 3, 2, 2), (1, 3, 4, 4), (1, 3, 8, 8), (1, 3, 16, 16)]
    logits = [_t(rng, *s) for s in shapes]
    y = rng.integers(0, 3, size=(1, 32, 32))
    ts = {f"l{i}": lg for i, lg in enumerate(logits)}
    return ts, lambda ts: total_loss([ts[f"l{i}"] for i in range(4)], y)


def _run_network_check():
    cfg = NetConfig(num_classes=2, base_channels=4, heads=2)
    rng = np.random.default_rng(2024)
    params = init_net(cfg, rng, dtype=np.float64)
    for h in params.heads:  # zero-init heads would hide the trunk from the loss
        h.w.data[...] = 0.05 * rng.standard_normal(h.w.shape)
    tensors, _ = named_arrays(params)
    tensors = dict(tensors)
    tensors["rgb"] = _t(rng, 1, 3, 16, 16)
    tensors["dep"] = _t(rng, 1, 1, 16, 16)
    y = rng.integers(0, 2, size=(1, 16, 16))

    def f(ts):
        out = net_forward(ts["rgb"], ts["dep"], params, cfg, training=True)
        return total_loss(out, y)

    return grad_check(f, tensors, max_per_tensor=2)


COMPONENTS = [
    ("add", _simple(_check_add)),
    ("sub", _simple(_check_sub)),
    ("mul", _simple(_check_mul)),
    ("div", _simple(_check_div)),
    ("matmul", _simple(_check_matmul)),
    ("relu", _simple(_check_relu)),
    ("sigmoid", _simple(_check_sigmoid)),
    ("exp_log", _simple(_check_exp_log)),
    ("pow", _simple(_check_pow)),
    ("sum_mean_max", _simple(_check_reductions)),
    ("reshape_permute", _simple(_check_reshape_permute)),
    ("conv2d", _simple(_check_conv2d)),
    ("conv2d_strided", _simple(_check_conv2d_strided)),
    ("conv2d_1x1", _simple(_check_conv2d_1x1)),
    ("batch_norm_train", _simple(_check_batch_norm_train)),
    ("batch_norm_eval", _simple(_check_batch_norm_eval)),
    ("linear", _simple(_check_linear)),
    ("softmax", _simple(_check_softmax)),
    ("log_softmax", _simple(_check_log_softmax)),
    ("adaptive_avg_pool2d", _simple(_check_adaptive_avg_pool2d)),
    ("upsample_nearest", _simple(_check_upsample_nearest)),
    ("upsample_bilinear", _simple(_check_upsample_bilinear)),
    ("max_pool_global", _simple(_check_max_pool_global)),
    ("pam_forward", _simple(_check_pam_forward)),
    ("pam_fuse", _simple(_check_pam_fuse)),
    ("mim_forward", _simple(_check_mim_forward)),
    ("ce_loss", _simple(_check_ce_loss)),
    ("total_loss", _simple(_check_total_loss)),
    ("network_end_to_end", _run_network_check),
]


def run_selftest(log=print):
    """Returns (results, ok); results rows are (name, max_rel_error, flagged)."""
    results = []
    worst_name, worst = None, -1.0
    t0 = time.perf_counter()
    for name, runner in COMPONENTS:
        rep = runner()
        ok = rep.max_rel_error < THRESHOLD
        n_checked = sum(rep.checked.values())
        n_flagged = sum(rep.flagged.values())
        results.append((name, rep.max_rel_error, n_flagged))
        log(f"{name:22s} max_rel {rep.max_rel_error:9.3e}  "
            f"checked {n_checked:4d}  flagged {n_flagged:2d}  "
            f"{'ok' if ok else 'FAIL'}")
        if rep.max_rel_error > worst:
            worst_name, worst = name, rep.max_rel_error
    ok = worst < THRESHOLD
    log(f"{len(results)} components in {time.perf_counter() - t0:.1f}s; "
        f"worst {worst_name} at {worst:.3e} "
        f"({'all under' if ok else 'EXCEEDS'} {THRESHOLD:g})")
    return results, ok


def main():
    _, ok = run_selftest()
    return 0 if ok else 1


if __name__ == "__main__":
    import sys
    sys.exit(main())
