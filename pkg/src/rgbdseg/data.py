"""Dataset IO, augmentation, and the synthetic depth-disambiguated generator.

The generator builds scenes where color and depth carry complementary
information.  Classes: 0 background, 1 near box, 2 far box, 3 textured disk.
Near and far boxes draw their colors from one shared palette, so no color cue
separates them; their depth ranges are disjoint.  The disk shares the
background depth range and is only recognizable by its texture.  Distractor
rectangles, labeled background, reuse the box palette at background depth, so
color alone cannot even tell a real box from background clutter; depth can.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .losses import IGNORE
from .netpbm import read_pnm, write_pnm
from .tensor import Tensor

NUM_CLASSES = 4


@dataclass
class SampleRecord:
    rgb: Tensor      # (3, H, W) in [0, 1]
    depth: Tensor    # (1, H, W) in [0, 1]
    labels: np.ndarray  # (H, W) uint8, 255 = ignore


@dataclass
class DatasetManifest:
    root: str
    ids: list
    num_classes: int
    split: str


# ---------------------------------------------------------------------------
# loading


def load_manifest(root, split=None):
    root = Path(root)
    lines = (root / "manifest.txt").read_text().splitlines()
    if not lines or not lines[0].startswith("classes="):
        raise ValueError(f"{root}/manifest.txt missing classes= header")
    k = int(lines[0].partition("=")[2])
    ids = [ln.strip() for ln in lines[1:] if ln.strip()]
    if split is None:
        split = root.name if root.name in ("train", "val") else "train"
    return DatasetManifest(str(root), ids, k, split)


def load_sample(root, sample_id, dtype=np.float32):
    root = Path(root)
    rgb_raw, rgb_max = read_pnm(root / f"{sample_id}_rgb.ppm")
    dep_raw, dep_max = read_pnm(root / f"{sample_id}_depth.pgm")
    lab, _ = read_pnm(root / f"{sample_id}_labels.pgm")
    if rgb_raw.ndim != 3:
        raise ValueError(f"{sample_id}: rgb file is not color")
    if dep_raw.ndim != 2 or lab.ndim != 2:
        raise ValueError(f"{sample_id}: depth/labels files are not grayscale")
    if not (rgb_raw.shape[:2] == dep_raw.shape == lab.shape):
        raise ValueError(f"{sample_id}: extent mismatch among planes")
    rgb = (rgb_raw.astype(dtype) / rgb_max).transpose(2, 0, 1)
    dep = (dep_raw.astype(dtype) / dep_max)[None]
    return SampleRecord(Tensor(rgb), Tensor(dep), lab.astype(np.uint8))


def write_sample(root, sample_id, rgb, depth, labels):
    """rgb (H, W, 3) and depth (H, W) in [0, 1] floats; labels (H, W) uint8."""
    root = Path(root)
    write_pnm(root / f"{sample_id}_rgb.ppm",
              np.clip(np.round(rgb * 255.0), 0, 255).astype(np.uint8), 255)
    write_pnm(root / f"{sample_id}_depth.pgm",
              np.clip(np.round(depth * 65535.0), 0, 65535).astype(np.uint16), 65535)
    write_pnm(root / f"{sample_id}_labels.pgm", labels.astype(np.uint8), 255)


# ---------------------------------------------------------------------------
# plain-numpy resizing (augmentation path, not part of the autodiff graph)


def _lin_weights(size_in, size_out):
    src = (np.arange(size_out) + 0.5) * (size_in / size_out) - 0.5
    i0 = np.floor(src).astype(np.int64)
    frac = src - i0
    return np.clip(i0, 0, size_in - 1), np.clip(i0 + 1, 0, size_in - 1), frac


def resize_bilinear_np(arr, oh, ow):
    """Half-pixel bilinear over the last two axes; preserves dtype."""
    h, w = arr.shape[-2:]
    i0, i1, fi = _lin_weights(h, oh)
    j0, j1, fj = _lin_weights(w, ow)
    rows = arr[..., i0, :] * (1.0 - fi)[:, None] + arr[..., i1, :] * fi[:, None]
    out = rows[..., j0] * (1.0 - fj) + rows[..., j1] * fj
    return out.astype(arr.dtype, copy=False)


def resize_nearest_np(arr, oh, ow):
    h, w = arr.shape[-2:]
    ri = np.clip(np.floor((np.arange(oh) + 0.5) * (h / oh)).astype(np.int64), 0, h - 1)
    rj = np.clip(np.floor((np.arange(ow) + 0.5) * (w / ow)).astype(np.int64), 0, w - 1)
    return arr[..., ri[:, None], rj[None, :]]


def _fit_axis(arr, target, axis, fill):
    cur = arr.shape[axis]
    if cur == target:
        return arr
    if cur > target:
        off = (cur - target) // 2
        sl = [slice(None)] * arr.ndim
        sl[axis] = slice(off, off + target)
        return arr[tuple(sl)]
    before = (target - cur) // 2
    pad = [(0, 0)] * arr.ndim
    pad[axis] = (before, target - cur - before)
    return np.pad(arr, pad, constant_values=fill)


def augment(s, rng):
    """Random horizontal mirror (p=0.5) and uniform rescale in [0.75, 1.25].

    Labels resize by nearest neighbor and pad with IGNORE; rgb/depth resize
    bilinearly and pad with zeros; output extents always match the input.
    """
    rgb, dep, lab = s.rgb.data, s.depth.data, s.labels
    if rng.random() < 0.5:
        rgb = rgb[:, :, ::-1]
        dep = dep[:, :, ::-1]
        lab = lab[:, ::-1]
    scale = rng.uniform(0.75, 1.25)
    h, w = lab.shape
    nh = max(1, int(round(h * scale)))
    nw = max(1, int(round(w * scale)))
    if (nh, nw) != (h, w):
        rgb = resize_bilinear_np(rgb, nh, nw)
        dep = resize_bilinear_np(dep, nh, nw)
        lab = resize_nearest_np(lab, nh, nw)
        for axis, target in ((-2, h), (-1, w)):
            rgb = _fit_axis(rgb, target, axis % rgb.ndim, 0.0)
            dep = _fit_axis(dep, target, axis % dep.ndim, 0.0)
            lab = _fit_axis(lab, target, axis % lab.ndim, IGNORE)
    return SampleRecord(Tensor(np.ascontiguousarray(rgb)),
                        Tensor(np.ascontiguousarray(dep)),
                        np.ascontiguousarray(lab))


# ---------------------------------------------------------------------------
# synthetic scene generator


def _box_color(rng):
    """Shared saturated palette for near boxes, far boxes, and distractors."""
    return np.array(colorsys.hsv_to_rgb(rng.uniform(), rng.uniform(0.6, 1.0),
                                        rng.uniform(0.6, 1.0)))


def _place_rect(rng, occupied, lo, hi):
    size = occupied.shape[0]
    for _ in range(60):
        bh = int(rng.integers(lo, hi))
        bw = int(rng.integers(lo, hi))
        r0 = int(rng.integers(0, size - bh))
        c0 = int(rng.integers(0, size - bw))
        if not occupied[r0:r0 + bh, c0:c0 + bw].any():
            occupied[r0:r0 + bh, c0:c0 + bw] = True
            return r0, c0, bh, bw
    return None


def _render_scene(rng, size):
    base = rng.uniform(0.3, 0.6) + rng.uniform(-0.05, 0.05, 3)
    rgb = np.ones((size, size, 3)) * base
    depth = np.full((size, size), rng.uniform(0.4, 0.6))
    labels = np.zeros((size, size), dtype=np.uint8)
    occupied = np.zeros((size, size), dtype=bool)
    lo = 7
    hi = max(lo + 2, size // 4)
    # Three scene types.  "clean": color is trustworthy and carries the disk
    # and the distractors.  "static": the color channel is dead air (iid
    # noise).  "blotch": the color channel is a field of box-palette squares
    # at background depth — false boxes everywhere, only depth rejects them.
    # A fixed additive fusion must serve all three with one channel
    # allocation; a scene-conditional gate can reweight per scene.
    draw = rng.random()
    scene = "clean" if draw < 0.4 else ("static" if draw < 0.7 else "blotch")

    n_near = int(rng.integers(1, 3))
    n_far = int(rng.integers(1, 3))
    n_distract = int(rng.integers(3, 7))

    jobs = [(1, 0.1, 0.3)] * n_near + [(2, 0.7, 0.9)] * n_far
    for cls, dlo, dhi in jobs:
        spot = _place_rect(rng, occupied, lo, hi)
        if spot is None:
            continue
        r0, c0, bh, bw = spot
        rgb[r0:r0 + bh, c0:c0 + bw] = _box_color(rng)
        depth[r0:r0 + bh, c0:c0 + bw] = rng.uniform(dlo, dhi)
        labels[r0:r0 + bh, c0:c0 + bw] = cls

    if scene == "clean":
        # textured disk: distinctive two-color checker, but its depth spans
        # all three bands — a near/far depth reading alone cannot tell disk
        # from box, so labeling needs the joint (color, depth) view
        rad = int(rng.integers(max(4, size // 12), max(6, size // 7)))
        spot = _place_rect(rng, occupied, 2 * rad + 1, 2 * rad + 2)
        if spot is not None:
            r0, c0 = spot[0], spot[1]
            cy, cx = r0 + rad, c0 + rad
            yy, xx = np.ogrid[:size, :size]
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= rad * rad
            checker = ((yy // 2 + xx // 2) % 2 == 0)
            bright = rng.uniform(0.85, 1.0)
            color_a = np.array([0.95, 0.9, 0.1]) * bright
            color_b = np.array([0.6, 0.05, 0.65]) * bright
            tex = np.where(checker[..., None], color_a, color_b)
            rgb[mask] = tex[mask]
            depth[mask] = rng.uniform(0.1, 0.9)
            labels[mask] = 3

        # distractors: box palette at background depth, labeled background
        for _ in range(n_distract):
            spot = _place_rect(rng, occupied, lo, hi)
            if spot is None:
                continue
            r0, c0, bh, bw = spot
            rgb[r0:r0 + bh, c0:c0 + bw] = _box_color(rng)
            depth[r0:r0 + bh, c0:c0 + bw] = rng.uniform(0.4, 0.6)
    elif scene == "static":
        # every color pixel independent noise; boxes exist only in depth
        rgb = rng.uniform(0.0, 1.0, rgb.shape)
    else:
        # 8-px grid of saturated box-palette squares over the whole frame
        # (real boxes included, so color still says nothing about class)
        cells = -(-size // 8)
        field = np.empty((cells, cells, 3))
        for i in range(cells):
            for j in range(cells):
                field[i, j] = _box_color(rng)
        rgb = np.repeat(np.repeat(field, 8, axis=0), 8, axis=1)[:size, :size]

    # heavy color noise, light depth noise: depth stays the clean cue
    rgb = np.clip(rgb + rng.normal(0.0, 0.06, rgb.shape), 0.0, 1.0)
    depth = np.clip(depth + rng.normal(0.0, 0.02, depth.shape), 0.0, 1.0)
    return rgb, depth, labels


def synth_generate(seed, count, size, out_dir):
    """Write ``count`` scenes and a manifest; bitwise deterministic per seed."""
    if size % 16:
        raise ValueError(f"size {size} not divisible by 16")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ids = []
    for i in range(count):
        rng = np.random.default_rng([seed, i])
        rgb, depth, labels = _render_scene(rng, size)
        sid = f"{i:05d}"
        write_sample(out, sid, rgb, depth, labels)
        ids.append(sid)
    (out / "manifest.txt").write_text(
        f"classes={NUM_CLASSES}\n" + "".join(f"{sid}\n" for sid in ids))
    return load_manifest(out)
