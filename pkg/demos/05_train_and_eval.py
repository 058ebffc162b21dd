"""End-to-end miniature run: synthesize, train, evaluate, write a prediction."""

import tempfile
from pathlib import Path

import numpy as np

from rgbdseg.checkpoint import load_checkpoint
from rgbdseg.cli import colorize_labels
from rgbdseg.data import load_manifest, load_sample, synth_generate
from rgbdseg.netpbm import write_pnm
from rgbdseg.network import NetConfig, predict
from rgbdseg.tensor import Tensor
from rgbdseg.train import TrainSettings, load_split, train_model

work = Path(tempfile.mkdtemp())
synth_generate(seed=0, count=24, size=32, out_dir=work / "train")
synth_generate(seed=1, count=8, size=32, out_dir=work / "val")

cfg = NetConfig(num_classes=4, base_channels=8)
settings = TrainSettings(epochs=8, batch_size=4, seed=0)
train_s = load_split(load_manifest(work / "train"))
val_s = load_split(load_manifest(work / "val"))

print("training a small fused model for 8 epochs ...")
params, best, history = train_model(cfg, train_s, val_s, settings,
                                    ckpt_dir=work / "ckpt")
print(f"best val miou {best.miou:.3f}, pixel acc {best.pixel_acc:.3f}")
print("per-class IoU:", {c: None if v is None else round(v, 3)
                         for c, v in enumerate(best.per_class_iou)})

# the checkpoint directory round-trips the parameters bit-exactly
params2, cfg2, extra = load_checkpoint(work / "ckpt")
print("checkpoint restored, best epoch was", extra["best_epoch"])

# colorized prediction for one validation scene
sample = load_sample(work / "val", "00000")
lab = predict(Tensor(sample.rgb.data[None]), Tensor(sample.depth.data[None]),
              params2, cfg2)[0]
out = work / "00000_pred.ppm"
write_pnm(out, colorize_labels(lab, cfg2.num_classes), 255)
print("wrote", out)
print("predicted class histogram:", np.bincount(lab.ravel(), minlength=4).tolist())
