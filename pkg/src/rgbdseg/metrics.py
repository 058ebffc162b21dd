"""Confusion-matrix evaluation: per-class IoU, mean IoU, and pixel accuracy.

Classes that never appear in truth or prediction have an undefined IoU; they
are excluded from the mean and the effective divisor is reported, so absent
classes cannot poison the score with NaNs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

IGNORE = 255


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # (K, K) int64; counts[i, j] = truth i predicted j

    @classmethod
    def zeros(cls, num_classes):
        return cls(np.zeros((num_classes, num_classes), dtype=np.int64))

    @property
    def num_classes(self):
        return self.counts.shape[0]

    def merge(self, other):
        self.counts += other.counts
        return self


@dataclass
class EvalReport:
    per_class_iou: list       # float per class, or None where undefined
    miou: float
    pixel_acc: float
    valid_classes: int


def accumulate_confusion(pred, truth, cm, ignore=IGNORE):
    """Count non-ignored pixels into cm; associative across batches."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    k = cm.num_classes
    valid = truth != ignore
    t = truth[valid].astype(np.int64)
    p = pred[valid].astype(np.int64)
    if t.size:
        if t.min() < 0 or t.max() >= k or p.min() < 0 or p.max() >= k:
            raise ValueError(f"class id outside [0, {k})")
        cm.counts += np.bincount(t * k + p, minlength=k * k).reshape(k, k)
    return cm


def compute_metrics(cm):
    counts = cm.counts
    total = int(counts.sum())
    if total == 0:
        raise ValueError("empty confusion matrix")
    diag = np.diag(counts).astype(np.float64)
    union = counts.sum(axis=1) + counts.sum(axis=0) - np.diag(counts)
    ious = []
    defined = []
    for c in range(cm.num_classes):
        if union[c] == 0:
            ious.append(None)
        else:
            v = float(diag[c] / union[c])
            ious.append(v)
            defined.append(v)
    return EvalReport(
        per_class_iou=ious,
        miou=float(np.mean(defined)),
        pixel_acc=float(diag.sum() / total),
        valid_classes=len(defined),
    )


def format_report(report):
    """Plain-text metrics document; float repr keeps it byte-reproducible."""
    lines = [
        f"miou={report.miou!r}",
        f"pixel_acc={report.pixel_acc!r}",
        f"valid_classes={report.valid_classes}",
    ]
    for c, iou in enumerate(report.per_class_iou):
        lines.append(f"iou.{c}={'undefined' if iou is None else repr(iou)}")
    return "\n".join(lines) + "\n"


def parse_report(text):
    kv = {}
    for line in text.splitlines():
        line = line.strip()
        if line:
            key, _, value = line.partition("=")
            kv[key] = value
    ious = []
    c = 0
    while f"iou.{c}" in kv:
        v = kv[f"iou.{c}"]
        ious.append(None if v == "undefined" else float(v))
        c += 1
    return EvalReport(ious, float(kv["miou"]), float(kv["pixel_acc"]),
                      int(kv["valid_classes"]))
