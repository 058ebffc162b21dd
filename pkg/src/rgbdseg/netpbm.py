"""Binary Netpbm image IO: 8-bit P6 (color), 8-bit and 16-bit P5 (gray).

16-bit samples are big-endian per the format specification.  Headers may
contain ``#`` comments; writers emit a canonical minimal header so the same
array always produces the same bytes.
"""

from __future__ import annotations

import numpy as np


def _parse_header(buf):
    """Returns (magic, width, height, maxval, data_offset)."""
    if len(buf) < 2 or buf[0:1] != b"P" or buf[1:2] not in b"56":
        raise ValueError("not a binary P5/P6 file")
    magic = buf[0:2].decode()
    pos = 2
    vals = []
    while len(vals) < 3:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        token = buf[start:pos]
        if not token.isdigit():
            raise ValueError(f"malformed header token {token!r}")
        vals.append(int(token))
    pos += 1  # single whitespace after maxval
    w, h, maxval = vals
    if w < 1 or h < 1 or not 0 < maxval < 65536:
        raise ValueError(f"bad extents/maxval {vals}")
    return magic, w, h, maxval, pos


def read_pnm(path):
    """Read P5/P6; returns (array, maxval).  Gray -> (H, W); color -> (H, W, 3)."""
    with open(path, "rb") as fh:
        buf = fh.read()
    magic, w, h, maxval, pos = _parse_header(buf)
    channels = 3 if magic == "P6" else 1
    if maxval > 255:
        dtype = np.dtype(">u2")
    else:
        dtype = np.dtype(np.uint8)
    need = w * h * channels * dtype.itemsize
    raw = buf[pos:pos + need]
    if len(raw) != need:
        raise ValueError(f"truncated pixel data: want {need} bytes, got {len(raw)}")
    arr = np.frombuffer(raw, dtype=dtype)
    if maxval > 255:
        arr = arr.astype(np.uint16)
    if channels == 3:
        return arr.reshape(h, w, 3), maxval
    return arr.reshape(h, w), maxval


def write_pnm(path, arr, maxval):
    """Write (H, W) as P5 or (H, W, 3) as P6; dtype follows maxval."""
    arr = np.asarray(arr)
    if arr.ndim == 3 and arr.shape[2] == 3:
        magic = "P6"
        h, w = arr.shape[:2]
        if maxval > 255:
            raise ValueError("P6 writer supports 8-bit only")
    elif arr.ndim == 2:
        magic = "P5"
        h, w = arr.shape
    else:
        raise ValueError(f"unsupported array shape {arr.shape}")
    if arr.min() < 0 or arr.max() > maxval:
        raise ValueError("values outside [0, maxval]")
    out = arr.astype(np.dtype(">u2") if maxval > 255 else np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"{magic}\n{w} {h}\n{maxval}\n".encode())
        fh.write(out.tobytes())
