"""Pooling-attention channel gate and its two-modality fusion.

Each modality's feature map is summarized by a two-step pooling (adaptive
average to a small grid, then a global max), squeezed through a 1x1 conv and a
sigmoid to give one gate value per channel, and re-applied as a gated
residual: f + f * V.  Fusion is the element-wise sum of the two gated maps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ops import Conv2dParams, adaptive_avg_pool2d, conv2d, conv_init, max_pool_global


@dataclass
class PamParams:
    conv: Conv2dParams   # 1x1, c -> c, with bias
    pooled_h: int = 2
    pooled_w: int = 2


@dataclass
class PamPair:
    """Per-modality gate parameters; shared=True aliases one set for both."""
    rgb: PamParams
    dep: PamParams
    shared: bool


def pam_init(rng, c, pooled_hw=(2, 2), dtype=np.float32):
    return PamParams(conv_init(rng, c, c, 1, bias=True, dtype=dtype), *pooled_hw)


def pam_pair_init(rng, c, shared, pooled_hw=(2, 2), dtype=np.float32):
    p = pam_init(rng, c, pooled_hw, dtype)
    if shared:
        return PamPair(p, p, True)
    return PamPair(p, pam_init(rng, c, pooled_hw, dtype), False)


def pam_forward(f, p):
    """Gate one modality: returns (f + f*V, V) with V in (0,1) per channel."""
    n, c, h, w = f.shape
    if h < p.pooled_h or w < p.pooled_w:
        raise ValueError(f"spatial extent {(h, w)} smaller than pooled size "
                         f"{(p.pooled_h, p.pooled_w)}")
    a = adaptive_avg_pool2d(f, (p.pooled_h, p.pooled_w))
    a = max_pool_global(a)
    v = conv2d(a, p.conv).sigmoid()
    return f + f * v, v


def pam_fuse(f_rgb, f_dep, pair):
    """Sum of the two gated modality maps."""
    if f_rgb.shape != f_dep.shape:
        raise ValueError(f"modality shapes differ: {f_rgb.shape} vs {f_dep.shape}")
    gated_rgb, _ = pam_forward(f_rgb, pair.rgb)
    gated_dep, _ = pam_forward(f_dep, pair.dep)
    return gated_rgb + gated_dep
