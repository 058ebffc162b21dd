"""Dual-modality feature extractor: a three-conv stem plus four residual stages.

Both modality branches (3-channel color, 1-channel depth) use the same
architecture with independent parameters.  The stage contract the decoder
relies on: stage n emits C0*2^(n-1) channels at 1/2^n of the input resolution
(the stem contributes the first halving, stage 1 keeps it, stages 2-4 halve).

Residual blocks are conv3x3+BN, relu, conv3x3+BN, plus the skip; there is no
activation after the addition, so a block with zeroed conv weights is exactly
the identity (or exactly its 1x1 skip projection when the shape changes).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ops import BatchNormParams, Conv2dParams, batch_norm, bn_init, conv2d, conv_init


@dataclass
class StageSpec:
    blocks: int
    in_ch: int
    out_ch: int
    downsample: bool


@dataclass
class StemParams:
    convs: list          # three Conv2dParams, k=3
    bns: list            # three BatchNormParams


@dataclass
class ResidualBlockParams:
    conv1: Conv2dParams
    bn1: BatchNormParams
    conv2: Conv2dParams
    bn2: BatchNormParams
    proj: Conv2dParams | None = None  # 1x1 strided skip projection when shape changes


@dataclass
class EncoderParams:
    stem: StemParams
    stages: list         # four lists of ResidualBlockParams


def stage_specs(c0, depths=(2, 2, 2, 2)):
    """Stage plan: stage 1 keeps width and resolution, stages 2-4 double/halve."""
    specs = []
    ch = c0
    for n, blocks in enumerate(depths, start=1):
        if n == 1:
            specs.append(StageSpec(blocks, ch, ch, downsample=False))
        else:
            specs.append(StageSpec(blocks, ch, 2 * ch, downsample=True))
            ch *= 2
    return specs


def encoder_init(rng, in_ch, c0, depths=(2, 2, 2, 2), dtype=np.float32):
    specs = stage_specs(c0, depths)
    stem = StemParams(
        convs=[conv_init(rng, c0, in_ch, 3, dtype=dtype),
               conv_init(rng, c0, c0, 3, dtype=dtype),
               conv_init(rng, c0, c0, 3, dtype=dtype)],
        bns=[bn_init(c0, dtype) for _ in range(3)],
    )
    stages = []
    for spec in specs:
        blocks = []
        for b in range(spec.blocks):
            cin = spec.in_ch if b == 0 else spec.out_ch
            needs_proj = b == 0 and (spec.downsample or spec.in_ch != spec.out_ch)
            blocks.append(ResidualBlockParams(
                conv1=conv_init(rng, spec.out_ch, cin, 3, dtype=dtype),
                bn1=bn_init(spec.out_ch, dtype),
                conv2=conv_init(rng, spec.out_ch, spec.out_ch, 3, dtype=dtype),
                bn2=bn_init(spec.out_ch, dtype),
                proj=conv_init(rng, spec.out_ch, cin, 1, dtype=dtype) if needs_proj else None,
            ))
        stages.append(blocks)
    return EncoderParams(stem, stages), specs


def stem_forward(img, p, training):
    """Three conv3x3+BN+relu layers; the first has stride 2."""
    n, c, h, w = img.shape
    if h % 16 or w % 16:
        raise ValueError(f"input extents {(h, w)} must be divisible by 16")
    f = img
    for i, (conv, bn) in enumerate(zip(p.convs, p.bns)):
        f = batch_norm(conv2d(f, conv, stride=2 if i == 0 else 1), bn, training).relu()
    return f


def _block_forward(f, bp, stride, training):
    y = batch_norm(conv2d(f, bp.conv1, stride=stride), bp.bn1, training).relu()
    z = batch_norm(conv2d(y, bp.conv2), bp.bn2, training)
    skip = f if bp.proj is None else conv2d(f, bp.proj, stride=stride, padding=0)
    return z + skip


def stage_forward(f, spec, params, training):
    if f.shape[1] != spec.in_ch:
        raise ValueError(f"stage expects {spec.in_ch} channels, got {f.shape[1]}")
    for b, bp in enumerate(params):
        stride = 2 if (b == 0 and spec.downsample) else 1
        f = _block_forward(f, bp, stride, training)
    return f


def encoder_forward(img, p, specs, training):
    """Returns the four stage outputs [F1, F2, F3, F4]."""
    f = stem_forward(img, p.stem, training)
    feats = []
    for spec, params in zip(specs, p.stages):
        f = stage_forward(f, spec, params, training)
        feats.append(f)
    return feats
