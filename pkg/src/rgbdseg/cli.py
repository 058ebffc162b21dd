"""Command-line front end: synth | train | eval | infer | selftest.

Every subcommand accepts the common flags --config/--seed/--data/--ckpt.
A config file holds `key = value` lines (network fields plus training keys
such as epochs or learning_rate); explicit flags override file values.
Usage errors exit 2 (argparse), runtime failures exit 1 with a message.
"""

from __future__ import annotations

import argparse
import colorsys
import dataclasses
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, parse_config_text
from .data import load_manifest, load_sample, synth_generate
from .metrics import format_report
from .netpbm import write_pnm
from .network import NetConfig, predict
from .selftest import run_selftest
from .tensor import Tensor
from .train import TrainSettings, evaluate_model, load_split, train_model


def class_palette(num_classes):
    """256-entry uint8 palette: class c at hue c/K, IGNORE (255) stays black."""
    pal = np.zeros((256, 3), dtype=np.uint8)
    for c in range(num_classes):
        rgb = colorsys.hsv_to_rgb(c / num_classes, 1.0, 1.0)
        pal[c] = [round(v * 255) for v in rgb]
    return pal


def colorize_labels(labels, num_classes):
    return class_palette(num_classes)[labels]


def _read_config_file(path, default_num_classes=None):
    if path is None:
        return None, {}
    cfg, extra = parse_config_text(Path(path).read_text(), default_num_classes)
    return cfg, extra


def _net_config(args, num_classes):
    cfg, extra = _read_config_file(args.config, num_classes)
    if cfg is None:
        cfg = NetConfig(num_classes=num_classes)
    over = {"num_classes": num_classes}
    if getattr(args, "base_channels", None) is not None:
        over["base_channels"] = args.base_channels
    if getattr(args, "heads", None) is not None:
        over["heads"] = args.heads
    if getattr(args, "pam_shared", None) is not None:
        over["pam_shared"] = args.pam_shared == "true"
    if getattr(args, "mim_layers", None) is not None:
        over["mim_layers"] = tuple(int(s) for s in args.mim_layers.split(","))
    if getattr(args, "resize_mode", None) is not None:
        over["decoder_resize_mode"] = args.resize_mode
    if getattr(args, "disable_pam", False):
        over["use_pam"] = False
    if getattr(args, "disable_mim", False):
        over["use_mim"] = False
    return dataclasses.replace(cfg, **over), extra


def _train_settings(args, extra):
    def pick(flag, key, cast, default):
        if flag is not None:
            return flag
        if key in extra:
            return cast(extra[key])
        return default

    return TrainSettings(
        epochs=pick(args.epochs, "epochs", int, 60),
        batch_size=pick(args.batch_size, "batch_size", int, 4),
        learning_rate=pick(args.learning_rate, "learning_rate", float, 0.01),
        momentum=pick(args.momentum, "momentum", float, 0.9),
        weight_decay=pick(args.weight_decay, "weight_decay", float, 5e-4),
        seed=pick(args.seed, "seed", int, 0),
        augment=not args.no_augment,
        rgb_only=args.rgb_only,
    )


def cmd_synth(args):
    out = Path(args.out)
    seed = args.seed if args.seed is not None else 0
    synth_generate(seed, args.count, args.size, out / "train")
    print(f"wrote {args.count} samples to {out / 'train' / 'manifest.txt'}")
    if args.val_count:
        synth_generate(seed + 1, args.val_count, args.size, out / "val")
        print(f"wrote {args.val_count} samples to {out / 'val' / 'manifest.txt'}")
    return 0


def cmd_train(args):
    train_man = load_manifest(Path(args.data) / "train")
    val_man = load_manifest(Path(args.data) / "val")
    if train_man.num_classes != val_man.num_classes:
        raise ValueError("train/val class counts disagree")
    cfg, extra = _net_config(args, train_man.num_classes)
    settings = _train_settings(args, extra)
    train_s = load_split(train_man)
    val_s = load_split(val_man)
    _, best, _ = train_model(cfg, train_s, val_s, settings, ckpt_dir=args.ckpt)
    print(f"best val miou {best.miou:.4f}; checkpoint at {args.ckpt}")
    return 0


def _checkpoint_rgb_only(extra):
    return extra.get("rgb_only", "false") == "true"


def cmd_eval(args):
    params, cfg, extra = load_checkpoint(args.ckpt)
    man = load_manifest(args.data)
    if man.num_classes != cfg.num_classes:
        raise ValueError(f"checkpoint has {cfg.num_classes} classes but dataset "
                         f"manifest says classes={man.num_classes}")
    report = evaluate_model(params, cfg, load_split(man),
                            rgb_only=_checkpoint_rgb_only(extra))
    text = format_report(report)
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(text)
    return 0


def cmd_infer(args):
    params, cfg, extra = load_checkpoint(args.ckpt)
    sample = load_sample(args.data, args.id)
    depth = sample.depth
    if _checkpoint_rgb_only(extra):
        depth = Tensor(np.zeros_like(depth.data))
    rgb = Tensor(sample.rgb.data[None])
    dep = Tensor(depth.data[None])
    lab = predict(rgb, dep, params, cfg)[0]
    out_dir = Path(args.out) if args.out else Path(args.data)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{args.id}_pred.ppm"
    write_pnm(path, colorize_labels(lab, cfg.num_classes), 255)
    print(f"wrote {path}")
    return 0


def cmd_selftest(args):
    _, ok = run_selftest()
    return 0 if ok else 1


def _add_common(sp):
    sp.add_argument("--config", help="key = value config file")
    sp.add_argument("--seed", type=int, help="master RNG seed")
    sp.add_argument("--data", help="dataset directory")
    sp.add_argument("--ckpt", help="checkpoint directory")


def build_parser():
    p = argparse.ArgumentParser(prog="rgbdseg",
                                description="RGB-D semantic segmentation toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic RGB-D dataset")
    _add_common(sp)
    sp.add_argument("--count", type=int, required=True, help="training samples")
    sp.add_argument("--val-count", type=int, default=0, help="validation samples")
    sp.add_argument("--size", type=int, default=64, help="square image extent")
    sp.add_argument("--out", required=True, help="output dataset root")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("train", help="train on <data>/train, validate on <data>/val")
    _add_common(sp)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--batch-size", type=int)
    sp.add_argument("--learning-rate", type=float)
    sp.add_argument("--momentum", type=float)
    sp.add_argument("--weight-decay", type=float)
    sp.add_argument("--base-channels", type=int)
    sp.add_argument("--heads", type=int)
    sp.add_argument("--pam-shared", choices=["true", "false"],
                    help="share the gate parameters across modalities")
    sp.add_argument("--mim-layers", help="comma list; 4 or 3,4")
    sp.add_argument("--resize-mode", choices=["nearest", "bilinear"])
    sp.add_argument("--disable-pam", action="store_true",
                    help="replace gated fusion with element-wise sum")
    sp.add_argument("--disable-mim", action="store_true",
                    help="replace cross-attention fusion with element-wise sum")
    sp.add_argument("--rgb-only", action="store_true",
                    help="zero the depth input for the whole run")
    sp.add_argument("--no-augment", action="store_true")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    _add_common(sp)
    sp.add_argument("--out", help="also write the metrics document here")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("infer", help="write a colorized prediction for one sample")
    _add_common(sp)
    sp.add_argument("--id", required=True, help="sample id, e.g. 00012")
    sp.add_argument("--out", help="output directory (default: the data directory)")
    sp.set_defaults(func=cmd_infer)

    sp = sub.add_parser("selftest", help="finite-difference audit of every component")
    _add_common(sp)
    sp.set_defaults(func=cmd_selftest)
    return p


def _require(args, *names):
    missing = [n for n in names if getattr(args, n) is None]
    if missing:
        flags = ", ".join("--" + n.replace("_", " ").replace(" ", "-") for n in missing)
        raise UsageError(f"{args.command}: missing required flag(s) {flags}")


class UsageError(Exception):
    pass


_REQUIRED = {
    "train": ("data", "ckpt"),
    "eval": ("data", "ckpt"),
    "infer": ("data", "ckpt"),
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _require(args, *_REQUIRED.get(args.command, ()))
    except UsageError as e:
        parser.error(str(e))  # exits 2
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
