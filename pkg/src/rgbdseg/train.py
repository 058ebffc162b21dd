"""Momentum-SGD training loop with per-epoch validation and best-mIoU saving.

Deterministic given the seed: the master seed spawns independent streams for
parameter init, epoch shuffling, and augmentation, so runs with identical
settings and thread count produce identical parameters, logs, and metrics.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .checkpoint import save_checkpoint
from .data import augment, load_sample
from .losses import total_loss
from .metrics import (
    ConfusionMatrix,
    accumulate_confusion,
    compute_metrics,
    format_report,
)
from .network import init_net, net_forward, predict, trainable_parameters
from .tensor import Tensor


class Sgd:
    """v = momentum*v + (grad + weight_decay*w); w -= lr*v."""

    def __init__(self, params, lr, momentum=0.9, weight_decay=5e-4):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p.data) for p in params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        for p, v in zip(self.params, self.velocity):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            v *= self.momentum
            v += g + self.weight_decay * p.data
            p.data -= self.lr * v


@dataclass
class TrainSettings:
    epochs: int = 60
    batch_size: int = 4
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0
    augment: bool = True
    rgb_only: bool = False


def load_split(manifest):
    return [load_sample(manifest.root, sid) for sid in manifest.ids]


def _batch_arrays(samples, rgb_only):
    rgb = np.stack([s.rgb.data for s in samples])
    dep = np.stack([s.depth.data for s in samples])
    if rgb_only:
        dep = np.zeros_like(dep)
    y = np.stack([s.labels for s in samples])
    return rgb, dep, y


def evaluate_model(params, cfg, samples, rgb_only=False, batch_size=8):
    cm = ConfusionMatrix.zeros(cfg.num_classes)
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        rgb, dep, y = _batch_arrays(chunk, rgb_only)
        pred = predict(Tensor(rgb), Tensor(dep), params, cfg)
        accumulate_confusion(pred, y, cm)
    return compute_metrics(cm)


def _log_line(s):
    print(s, flush=True)


def train_model(cfg, train_samples, val_samples, settings, ckpt_dir=None, log=_log_line):
    """Returns (params, best_report, history).

    history rows: (epoch, mean train loss, val miou, val pixel_acc).  The
    checkpoint directory, when given, ends up holding the best-mIoU epoch's
    parameters and its metrics document.
    """
    init_ss, shuffle_ss, aug_ss = np.random.SeedSequence(settings.seed).spawn(3)
    params = init_net(cfg, np.random.default_rng(init_ss))
    opt = Sgd(trainable_parameters(params), settings.learning_rate,
              settings.momentum, settings.weight_decay)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    aug_rng = np.random.default_rng(aug_ss)

    extra = {"seed": settings.seed, "rgb_only": settings.rgb_only}
    best_report = None
    history = []
    for epoch in range(1, settings.epochs + 1):
        order = shuffle_rng.permutation(len(train_samples))
        losses = []
        for start in range(0, len(order), settings.batch_size):
            chunk = [train_samples[i] for i in order[start:start + settings.batch_size]]
            if settings.augment:
                chunk = [augment(s, aug_rng) for s in chunk]
            rgb, dep, y = _batch_arrays(chunk, settings.rgb_only)
            out = net_forward(Tensor(rgb), Tensor(dep), params, cfg, training=True)
            loss = total_loss(out, y)
            value = loss.item()
            if not np.isfinite(value):
                raise RuntimeError(f"non-finite loss {value} at epoch {epoch}; "
                                   "lower the learning rate")
            opt.zero_grad()
            loss.backward(free_graph=True)
            opt.step()
            losses.append(value)
        report = evaluate_model(params, cfg, val_samples, settings.rgb_only)
        history.append((epoch, float(np.mean(losses)), report.miou, report.pixel_acc))
        log(f"epoch {epoch:3d}  loss {np.mean(losses):.4f}  "
            f"val_miou {report.miou:.4f}  val_pixel_acc {report.pixel_acc:.4f}")
        if best_report is None or report.miou > best_report.miou:
            best_report = report
            extra["best_epoch"] = epoch
            if ckpt_dir is not None:
                save_checkpoint(ckpt_dir, params, cfg, extra)
                Path(ckpt_dir, "metrics.txt").write_text(format_report(report))
    return params, best_report, history
