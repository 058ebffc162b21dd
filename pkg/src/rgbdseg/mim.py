"""Cross-modal attention exchange between the two deepest feature maps.

Each modality projects its flattened feature map to queries, keys and values.
The masks are crossed: the rgb mask scores rgb queries against depth keys (and
vice versa), but each mask then weights its own modality's values.  Residual
additions keep the original features in the mix, and the fused output is the
sum of the two residual streams.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ops import LinearParams, linear, linear_init, softmax


@dataclass
class MimParams:
    wq_rgb: LinearParams
    wk_rgb: LinearParams
    wv_rgb: LinearParams
    wq_dep: LinearParams
    wk_dep: LinearParams
    wv_dep: LinearParams
    heads: int = 8
    out_rgb: LinearParams | None = None  # optional post-concat projections
    out_dep: LinearParams | None = None


def mim_init(rng, c, heads=8, out_proj=False, dtype=np.float32):
    if c % heads != 0:
        raise ValueError(f"channels {c} not divisible by {heads} heads")
    mk = lambda: linear_init(rng, c, c, bias=False, dtype=dtype)
    return MimParams(mk(), mk(), mk(), mk(), mk(), mk(), heads,
                     mk() if out_proj else None, mk() if out_proj else None)


def tokens_from_map(f):
    """(n, c, h, w) -> (n, h*w, c), row-major over space."""
    n, c, h, w = f.shape
    return f.reshape(n, c, h * w).permute(0, 2, 1)


def map_from_tokens(t, h, w):
    """Inverse of tokens_from_map."""
    n, hw, c = t.shape
    if hw != h * w:
        raise ValueError(f"{hw} tokens cannot fill a {h}x{w} map")
    return t.permute(0, 2, 1).reshape(n, c, h, w)


def _split_heads(t, heads):
    """(n, T, c) -> (n, heads, T, c/heads)."""
    n, T, c = t.shape
    return t.reshape(n, T, heads, c // heads).permute(0, 2, 1, 3)


def _merge_heads(t):
    """(n, heads, T, d_k) -> (n, T, heads*d_k), concatenating heads over channels."""
    n, heads, T, dk = t.shape
    return t.permute(0, 2, 1, 3).reshape(n, T, heads * dk)


def cross_mask(q, k):
    """softmax(q @ k^T / sqrt(d_k)) over the last axis; rows sum to 1."""
    if q.shape != k.shape:
        raise ValueError(f"query/key shapes differ: {q.shape} vs {k.shape}")
    dk = q.shape[-1]
    logits = (q @ k.permute(0, 1, 3, 2)) * (1.0 / np.sqrt(dk))
    return softmax(logits, axis=-1)


def mim_forward(f_rgb, f_dep, p):
    """Returns (f_rgb + attended_rgb, f_dep + attended_dep, their sum)."""
    if f_rgb.shape != f_dep.shape:
        raise ValueError(f"modality shapes differ: {f_rgb.shape} vs {f_dep.shape}")
    n, c, h, w = f_rgb.shape
    if c % p.heads != 0:
        raise ValueError(f"channels {c} not divisible by {p.heads} heads")
    t_rgb = tokens_from_map(f_rgb)
    t_dep = tokens_from_map(f_dep)
    q_rgb = _split_heads(linear(t_rgb, p.wq_rgb), p.heads)
    k_rgb = _split_heads(linear(t_rgb, p.wk_rgb), p.heads)
    v_rgb = _split_heads(linear(t_rgb, p.wv_rgb), p.heads)
    q_dep = _split_heads(linear(t_dep, p.wq_dep), p.heads)
    k_dep = _split_heads(linear(t_dep, p.wk_dep), p.heads)
    v_dep = _split_heads(linear(t_dep, p.wv_dep), p.heads)
    att_rgb = _merge_heads(cross_mask(q_rgb, k_dep) @ v_rgb)
    att_dep = _merge_heads(cross_mask(q_dep, k_rgb) @ v_dep)
    if p.out_rgb is not None:
        att_rgb = linear(att_rgb, p.out_rgb)
    if p.out_dep is not None:
        att_dep = linear(att_dep, p.out_dep)
    f_rgb4 = map_from_tokens(att_rgb, h, w) + f_rgb
    f_dep4 = map_from_tokens(att_dep, h, w) + f_dep
    return f_rgb4, f_dep4, f_rgb4 + f_dep4
