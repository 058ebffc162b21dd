"""Checkpoint persistence.

Tensor file format (".mipt"): magic ``MIPT``, version byte 1, rank byte, rank
u32 little-endian extents, then the values as f32 little-endian in row-major
order.  A checkpoint is a directory holding one such file per named array
(parameters and batch-norm running statistics), a ``manifest.txt`` mapping
names to files, and a ``config.txt`` of ``key = value`` lines.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .network import NetConfig, init_net, named_arrays, validate_config

MAGIC = b"MIPT"
VERSION = 1


def write_tensor_file(path, arr):
    arr = np.asarray(arr)
    if arr.ndim > 255:
        raise ValueError("rank too large")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<BB", VERSION, arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_tensor_file(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != MAGIC:
        raise ValueError(f"{path}: bad magic {buf[:4]!r}")
    version, rank = struct.unpack_from("<BB", buf, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    shape = struct.unpack_from(f"<{rank}I", buf, 6)
    offset = 6 + 4 * rank
    count = int(np.prod(shape)) if rank else 1
    need = offset + 4 * count
    if len(buf) != need:
        raise ValueError(f"{path}: size {len(buf)} != expected {need}")
    return np.frombuffer(buf, dtype="<f4", count=count, offset=offset).reshape(shape).copy()


# ---------------------------------------------------------------------------
# key = value config documents


_CONFIG_FIELDS = {
    "num_classes": int,
    "base_channels": int,
    "stage_depths": lambda s: tuple(int(x) for x in s.split(",")),
    "pam_shared": lambda s: s == "true",
    "mim_layers": lambda s: tuple(int(x) for x in s.split(",")),
    "heads": int,
    "decoder_resize_mode": str,
    "pooled_hw": lambda s: tuple(int(x) for x in s.split(",")),
    "use_pam": lambda s: s == "true",
    "use_mim": lambda s: s == "true",
    "mim_out_proj": lambda s: s == "true",
}


def _format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ",".join(str(x) for x in v)
    return str(v)


def format_config(cfg, extra=None):
    kv = {name: getattr(cfg, name) for name in _CONFIG_FIELDS}
    lines = [f"{k} = {_format_value(v)}" for k, v in kv.items()]
    for k in sorted(extra or {}):
        lines.append(f"{k} = {_format_value(extra[k])}")
    return "\n".join(lines) + "\n"


def parse_config_text(text, default_num_classes=None):
    """Returns (NetConfig, dict of unrecognized keys left as strings).

    ``default_num_classes`` fills in the class count when the document omits
    it (training configs leave it to the dataset manifest); without a default
    an omission is an error.
    """
    fields = {}
    extra = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key in _CONFIG_FIELDS:
            fields[key] = _CONFIG_FIELDS[key](value)
        else:
            extra[key] = value
    if "num_classes" not in fields:
        if default_num_classes is None:
            raise ValueError("config missing num_classes")
        fields["num_classes"] = default_num_classes
    return NetConfig(**fields), extra


# ---------------------------------------------------------------------------
# checkpoint directories


def _file_name(name):
    return name.replace("/", "_") + ".mipt"


def save_checkpoint(path, params, cfg, extra=None):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    tensors, state = named_arrays(params)
    entries = {}
    for name, t in tensors.items():
        entries[name] = t.data
    for name, arr in state.items():
        entries[name] = arr
    manifest_lines = []
    for name in entries:
        fn = _file_name(name)
        write_tensor_file(path / fn, entries[name])
        manifest_lines.append(f"{name} {fn}")
    (path / "manifest.txt").write_text("".join(ln + "\n" for ln in manifest_lines))
    (path / "config.txt").write_text(format_config(cfg, extra))


def load_checkpoint(path, dtype=np.float32):
    """Rebuild (params, cfg, extra) from a checkpoint directory.

    Parameter shapes are validated against a freshly constructed network for
    the stored config; mismatches raise with the offending name.
    """
    path = Path(path)
    cfg, extra = parse_config_text((path / "config.txt").read_text())
    validate_config(cfg)
    entries = {}
    for line in (path / "manifest.txt").read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        name, _, fn = line.partition(" ")
        entries[name] = read_tensor_file(path / fn)
    params = init_net(cfg, np.random.default_rng(0), dtype=dtype)
    tensors, state = named_arrays(params)
    expected = {**{n: t.data for n, t in tensors.items()}, **state}
    missing = sorted(set(expected) - set(entries))
    surplus = sorted(set(entries) - set(expected))
    if missing or surplus:
        raise ValueError(f"checkpoint/config mismatch: missing {missing[:3]}, "
                         f"unexpected {surplus[:3]}")
    for name, t in tensors.items():
        arr = entries[name]
        if arr.shape != t.data.shape:
            raise ValueError(f"{name}: checkpoint shape {arr.shape} != {t.data.shape}")
        t.data = arr.astype(dtype)
    for name, s in state.items():
        arr = entries[name]
        if arr.shape != s.shape:
            raise ValueError(f"{name}: checkpoint shape {arr.shape} != {s.shape}")
        s[:] = arr.astype(s.dtype)
    return params, cfg, extra
