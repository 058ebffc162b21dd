import math

import numpy as np
import pytest

from rgbdseg import Tensor, grad_check
from rgbdseg.losses import ce_loss, downsample_labels, total_loss


def test_downsample_identity_and_constant():
    y = np.arange(16).reshape(4, 4)
    np.testing.assert_array_equal(downsample_labels(y, 1), y)
    np.testing.assert_array_equal(downsample_labels(np.full((4, 4), 7), 2), np.full((2, 2), 7))


def test_downsample_checkerboard_picks_corners():
    y = np.array([[0, 1, 0, 1],
                  [1, 0, 1, 0],
                  [0, 1, 0, 1],
                  [1, 0, 1, 0]])
    np.testing.assert_array_equal(downsample_labels(y, 2), [[0, 0], [0, 0]])


def test_downsample_compositional():
    rng = np.random.default_rng(70)
    y = rng.integers(0, 5, size=(2, 8, 8))
    np.testing.assert_array_equal(
        downsample_labels(downsample_labels(y, 2), 2), downsample_labels(y, 4))


def test_downsample_indivisible_raises():
    with pytest.raises(ValueError):
        downsample_labels(np.zeros((5, 4), dtype=int), 2)


def test_uniform_logits_loss_is_ln_k():
    for k in [2, 4, 7]:
        logits = Tensor(np.zeros((1, k, 3, 3)))
        y = np.random.default_rng(k).integers(0, k, size=(1, 3, 3))
        loss = ce_loss(logits, y)
        np.testing.assert_allclose(loss.item(), math.log(k), atol=1e-9)


def test_saturated_correct_loss_near_zero():
    k = 4
    y = np.random.default_rng(71).integers(0, k, size=(1, 3, 3))
    logits = np.zeros((1, k, 3, 3))
    np.put_along_axis(logits, y[:, None], 1000.0, axis=1)
    assert ce_loss(Tensor(logits), y).item() < 1e-6


def test_ce_loss_matches_per_pixel_oracle():
    rng = np.random.default_rng(72)
    logits = rng.standard_normal((1, 3, 2, 2))
    y = rng.integers(0, 3, size=(1, 2, 2))
    got = ce_loss(Tensor(logits), y).item()
    acc = 0.0
    for i in range(2):
        for j in range(2):
            z = logits[0, :, i, j]
            p = np.exp(z) / np.exp(z).sum()
            acc += -math.log(p[y[0, i, j]])
    np.testing.assert_allclose(got, acc / 4.0, rtol=1e-12)


def test_ce_loss_ignores_255():
    rng = np.random.default_rng(73)
    logits = rng.standard_normal((1, 3, 2, 2))
    y = np.array([[[0, 255], [255, 2]]])
    got = ce_loss(Tensor(logits), y).item()
    z0 = logits[0, :, 0, 0]
    z3 = logits[0, :, 1, 1]
    want = (-math.log(np.exp(z0[0]) / np.exp(z0).sum())
            - math.log(np.exp(z3[2]) / np.exp(z3).sum())) / 2.0
    np.testing.assert_allclose(got, want, rtol=1e-12)


def test_ce_loss_all_ignored_raises():
    with pytest.raises(ValueError):
        ce_loss(Tensor(np.zeros((1, 2, 2, 2))), np.full((1, 2, 2), 255))


def test_ce_loss_bad_labels_raise():
    with pytest.raises(ValueError):
        ce_loss(Tensor(np.zeros((1, 3, 2, 2))), np.full((1, 2, 2), 3))
    with pytest.raises(ValueError):
        ce_loss(Tensor(np.zeros((1, 3, 2, 2))), np.zeros((1, 3, 3), dtype=int))


def test_ce_loss_grad_check():
    rng = np.random.default_rng(74)
    logits = Tensor(rng.standard_normal((2, 3, 2, 2)))
    y = rng.integers(0, 3, size=(2, 2, 2))
    y[0, 0, 0] = 255

    def f(t):
        return ce_loss(t, y)

    rep = grad_check(f, logits)
    assert rep.max_rel_error < 1e-6


def test_total_loss_additivity():
    rng = np.random.default_rng(75)
    logits = rng.standard_normal((1, 3, 4, 4))
    y = rng.integers(0, 3, size=(1, 4, 4))
    single = ce_loss(Tensor(logits), y).item()
    total = total_loss([Tensor(logits)] * 4, y).item()
    np.testing.assert_allclose(total, 4.0 * single, rtol=1e-12)


def test_total_loss_three_uniform_one_saturated():
    k = 3
    rng = np.random.default_rng(76)
    y = rng.integers(0, k, size=(1, 4, 4))
    sat = np.zeros((1, k, 4, 4))
    np.put_along_axis(sat, y[:, None], 1000.0, axis=1)
    levels = [Tensor(np.zeros((1, k, 4, 4)))] * 3 + [Tensor(sat)]
    total = total_loss(levels, y).item()
    np.testing.assert_allclose(total, 3.0 * math.log(k), atol=1e-6)


def test_total_loss_pyramid_matches_recomputation():
    rng = np.random.default_rng(77)
    y = rng.integers(0, 4, size=(2, 16, 16))
    levels = [Tensor(rng.standard_normal((2, 4, s, s))) for s in [2, 4, 8, 16]]
    total = total_loss(levels, y).item()
    want = sum(ce_loss(lg, y[:, ::16 // lg.shape[-1], ::16 // lg.shape[-1]]).item()
               for lg in levels)
    np.testing.assert_allclose(total, want, rtol=1e-12)
