"""Full segmentation network: dual encoders, staged fusion, four-level decoder.

Dataflow for an H x W input (H, W divisible by 16):

- each modality runs its own stem + four residual stages, giving features at
  1/2, 1/4, 1/8, 1/16 resolution with C0, 2*C0, 4*C0, 8*C0 channels;
- stages 1-3 are fused by the pooling-attention gate (or a plain sum when the
  gate is disabled), stage 4 by the cross-modal attention block (likewise);
- the decoder starts from the fused stage-4 map and applies three up-blocks
  (resize x2, conv3x3+BN+relu halving channels, conv3x3+BN+relu), adding the
  matching fused skip after each;
- a 1x1 conv head emits K-class logits at each of the four decoder depths
  (1/16, 1/8, 1/4, 1/2 of input), coarse to fine, for deep supervision.

Prediction takes the argmax of the finest logits and nearest-upsamples x2
back to input resolution.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, is_dataclass

import numpy as np

from .encoder import EncoderParams, encoder_forward, encoder_init, stage_specs
from .mim import MimParams, mim_forward, mim_init
from .ops import (
    BatchNormParams,
    Conv2dParams,
    batch_norm,
    bn_init,
    conv2d,
    conv_init,
    upsample,
)
from .pam import PamPair, pam_fuse, pam_pair_init
from .tensor import Tensor, no_grad


@dataclass
class NetConfig:
    num_classes: int
    base_channels: int = 16
    stage_depths: tuple = (2, 2, 2, 2)
    pam_shared: bool = False
    mim_layers: tuple = (4,)
    heads: int = 8
    decoder_resize_mode: str = "bilinear"
    pooled_hw: tuple = (2, 2)
    use_pam: bool = True
    use_mim: bool = True
    mim_out_proj: bool = False


def validate_config(cfg):
    if cfg.num_classes < 1:
        raise ValueError("num_classes must be positive")
    if cfg.base_channels < cfg.num_classes:
        raise ValueError("decoder channels would drop below num_classes; "
                         f"need base_channels >= {cfg.num_classes}")
    if len(cfg.stage_depths) != 4 or any(d < 1 for d in cfg.stage_depths):
        raise ValueError("stage_depths must be 4 positive ints")
    layers = tuple(sorted(set(cfg.mim_layers)))
    if not layers or not set(layers) <= {3, 4} or 4 not in layers:
        raise ValueError("mim_layers must be {4} or {3, 4}")
    if cfg.decoder_resize_mode not in ("nearest", "bilinear"):
        raise ValueError(f"unknown resize mode {cfg.decoder_resize_mode!r}")
    if cfg.pooled_hw[0] < 1 or cfg.pooled_hw[1] < 1:
        raise ValueError("pooled_hw must be positive")
    if cfg.use_mim:
        for layer in layers:
            width = cfg.base_channels * 2 ** (layer - 1)
            if width % cfg.heads:
                raise ValueError(f"{cfg.heads} heads do not divide {width} channels "
                                 f"at stage {layer}")
    return cfg


@dataclass
class UpBlockParams:
    conv1: Conv2dParams
    bn1: BatchNormParams
    conv2: Conv2dParams
    bn2: BatchNormParams


@dataclass
class NetParams:
    enc_rgb: EncoderParams
    enc_dep: EncoderParams
    pams: list                  # PamPair per stage 1..3 (empty when gate disabled)
    mims: dict                  # stage -> MimParams (empty when attention disabled)
    up_blocks: list             # three UpBlockParams
    heads: list                 # four 1x1 Conv2dParams, coarse to fine


@dataclass
class ForwardOutputs:
    logits: list                # four logit maps, coarse (input/16) to fine (input/2)
    fused_skips: list           # fused stage 1..3 maps
    f_con4: Tensor


def init_net(cfg, rng, dtype=np.float32):
    validate_config(cfg)
    c0 = cfg.base_channels
    enc_rgb, _ = encoder_init(rng, 3, c0, cfg.stage_depths, dtype)
    enc_dep, _ = encoder_init(rng, 1, c0, cfg.stage_depths, dtype)
    pams = []
    if cfg.use_pam:
        for n in range(1, 4):
            pams.append(pam_pair_init(rng, c0 * 2 ** (n - 1), cfg.pam_shared,
                                      cfg.pooled_hw, dtype))
    mims = {}
    if cfg.use_mim:
        for layer in sorted(set(cfg.mim_layers)):
            mims[layer] = mim_init(rng, c0 * 2 ** (layer - 1), cfg.heads,
                                   cfg.mim_out_proj, dtype)
    up_blocks = []
    ch = c0 * 8
    for _ in range(3):
        up_blocks.append(UpBlockParams(
            conv1=conv_init(rng, ch // 2, ch, 3, dtype=dtype),
            bn1=bn_init(ch // 2, dtype),
            conv2=conv_init(rng, ch // 2, ch // 2, 3, dtype=dtype),
            bn2=bn_init(ch // 2, dtype),
        ))
        ch //= 2
    heads = []
    for e in (3, 2, 1, 0):
        head = conv_init(rng, cfg.num_classes, c0 * 2 ** e, 1, bias=True, dtype=dtype)
        head.w.data[...] = 0.0  # uniform logits at init, so the loss starts at 4·ln K
        heads.append(head)
    return NetParams(enc_rgb, enc_dep, pams, mims, up_blocks, heads)


def _up_block(d, p, mode, training):
    r = upsample(d, 2, mode)
    y = batch_norm(conv2d(r, p.conv1), p.bn1, training).relu()
    return batch_norm(conv2d(y, p.conv2), p.bn2, training).relu()


def net_forward(rgb, depth, params, cfg, training):
    n, c, h, w = rgb.shape
    nd, cd, hd, wd = depth.shape
    if c != 3 or cd != 1:
        raise ValueError("expected 3-channel rgb and 1-channel depth")
    if (n, h, w) != (nd, hd, wd):
        raise ValueError(f"modality shapes disagree: {rgb.shape} vs {depth.shape}")
    specs = stage_specs(cfg.base_channels, cfg.stage_depths)
    feats_rgb = encoder_forward(rgb, params.enc_rgb, specs, training)
    feats_dep = encoder_forward(depth, params.enc_dep, specs, training)

    skips = []
    for i in range(3):
        stage = i + 1
        fr, fd = feats_rgb[i], feats_dep[i]
        if cfg.use_mim and stage in params.mims:
            skips.append(mim_forward(fr, fd, params.mims[stage])[2])
        elif cfg.use_pam:
            skips.append(pam_fuse(fr, fd, params.pams[i]))
        else:
            skips.append(fr + fd)
    if cfg.use_mim:
        f_con4 = mim_forward(feats_rgb[3], feats_dep[3], params.mims[4])[2]
    else:
        f_con4 = feats_rgb[3] + feats_dep[3]

    d = f_con4
    logits = [conv2d(d, params.heads[0])]
    for k in range(3):
        d = _up_block(d, params.up_blocks[k], cfg.decoder_resize_mode, training)
        skip = skips[2 - k]
        if d.shape != skip.shape:
            raise ValueError(f"decoder/skip shape mismatch: {d.shape} vs {skip.shape}")
        d = d + skip
        logits.append(conv2d(d, params.heads[k + 1]))
    return ForwardOutputs(logits, skips, f_con4)


def predict(rgb, depth, params, cfg):
    """Label map at input resolution; argmax ties go to the smaller class."""
    with no_grad():
        out = net_forward(rgb, depth, params, cfg, training=False)
    lab = np.argmax(out.logits[-1].data, axis=1)
    return lab.repeat(2, axis=1).repeat(2, axis=2)


# ---------------------------------------------------------------------------
# parameter tree walking (checkpointing and the optimizer build on this)


def _walk(obj, prefix, tensors, state):
    if obj is None:
        return
    if isinstance(obj, Tensor):
        tensors[prefix] = obj
    elif isinstance(obj, np.ndarray):
        state[prefix] = obj
    elif is_dataclass(obj):
        for f in fields(obj):
            _walk(getattr(obj, f.name), f"{prefix}.{f.name}", tensors, state)
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            _walk(item, f"{prefix}.{i}", tensors, state)
    elif isinstance(obj, dict):
        for key in sorted(obj):
            _walk(obj[key], f"{prefix}.{key}", tensors, state)
    # ints, bools, strings carry no arrays


def named_arrays(params):
    """(name -> parameter Tensor, name -> state ndarray), deterministic order.

    Aliased tensors (shared-gate configs) appear under every name that reaches
    them; consumers that must not double-count deduplicate by identity.
    """
    tensors, state = {}, {}
    _walk(params, "net", tensors, state)
    return tensors, state


def trainable_parameters(params):
    """Unique parameter tensors in deterministic name order."""
    tensors, _ = named_arrays(params)
    seen = set()
    out = []
    for name in tensors:
        t = tensors[name]
        if id(t) not in seen:
            seen.add(id(t))
            out.append(t)
    return out
