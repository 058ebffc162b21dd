"""Deep-supervised segmentation objective.

The decoder emits logits at four scales; each gets a pixel-wise cross-entropy
against a label map downsampled to its resolution (top-left nearest pick), and
the four losses are summed without weights.  Label value 255 marks pixels to
ignore; they contribute neither to the mean nor to the gradient.
"""

from __future__ import annotations

import numpy as np

from .ops import log_softmax

IGNORE = 255


def downsample_labels(y, factor):
    """Top-left nearest downsample: out[i, j] = y[i*factor, j*factor]."""
    y = np.asarray(y)
    if factor == 1:
        return y
    h, w = y.shape[-2:]
    if h % factor or w % factor:
        raise ValueError(f"extents {(h, w)} not divisible by {factor}")
    return y[..., ::factor, ::factor]


def ce_loss(logits, y, ignore=IGNORE):
    """Mean -log softmax probability of the true class over non-ignored pixels."""
    n, k, h, w = logits.shape
    if k < 2:
        raise ValueError("need at least 2 classes")
    y = np.asarray(y)
    if y.shape != (n, h, w):
        raise ValueError(f"labels shaped {y.shape}, expected {(n, h, w)}")
    valid = y != ignore
    count = int(valid.sum())
    if count == 0:
        raise ValueError("all pixels ignored; loss undefined")
    if y[valid].min() < 0 or y[valid].max() >= k:
        raise ValueError(f"label outside [0, {k})")
    pick = np.zeros(logits.shape, dtype=logits.dtype)
    safe = np.where(valid, y, 0)
    np.put_along_axis(pick, safe[:, None], valid[:, None].astype(logits.dtype), axis=1)
    lsm = log_softmax(logits, axis=1)
    return -(lsm * pick).sum() / count


def total_loss(outputs, y_full, ignore=IGNORE):
    """Sum of per-level losses against the label pyramid.

    ``outputs`` is a ForwardOutputs (or any object with .logits) or a plain
    list of logit tensors ordered coarse to fine; ``y_full`` is the batch of
    full-resolution label maps.
    """
    logits = getattr(outputs, "logits", outputs)
    y_full = np.asarray(y_full)
    h_full = y_full.shape[-2]
    total = None
    for lg in logits:
        factor = h_full // lg.shape[-2]
        if factor * lg.shape[-2] != h_full:
            raise ValueError(f"label height {h_full} not a multiple of logit height {lg.shape[-2]}")
        term = ce_loss(lg, downsample_labels(y_full, factor), ignore)
        total = term if total is None else total + term
    return total
