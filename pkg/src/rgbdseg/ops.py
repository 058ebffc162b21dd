"""Neural-network operations over the autodiff tape.

Convolution and batch norm are primitives with hand-derived backward passes
(one GEMM per conv direction).  Pooling and resizing are expressed as
multiplications by constant interpolation matrices, so their gradients come
for free through the matmul primitive.  Everything keeps the NCHW layout and
preserves the input dtype.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .tensor import Tensor


# ---------------------------------------------------------------------------
# parameter containers


@dataclass
class Conv2dParams:
    w: Tensor               # (cout, cin, k, k)
    b: Tensor | None = None  # (cout,)


@dataclass
class BatchNormParams:
    gamma: Tensor            # (c,)
    beta: Tensor             # (c,)
    running_mean: np.ndarray  # (c,), state not parameter
    running_var: np.ndarray


@dataclass
class LinearParams:
    w: Tensor                # (cin, cout)
    b: Tensor | None = None


def conv_init(rng, cout, cin, k, bias=False, dtype=np.float32):
    """Fan-in-scaled uniform weights, bound 1/sqrt(cin*k*k); zero bias."""
    bound = np.sqrt(1.0 / (cin * k * k))
    w = Tensor(rng.uniform(-bound, bound, size=(cout, cin, k, k)).astype(dtype),
               requires_grad=True)
    b = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True) if bias else None
    return Conv2dParams(w, b)


def bn_init(c, dtype=np.float32):
    return BatchNormParams(
        gamma=Tensor(np.ones(c, dtype=dtype), requires_grad=True),
        beta=Tensor(np.zeros(c, dtype=dtype), requires_grad=True),
        running_mean=np.zeros(c, dtype=dtype),
        running_var=np.ones(c, dtype=dtype),
    )


def linear_init(rng, cin, cout, bias=False, dtype=np.float32):
    """Fan-in-scaled uniform weights, bound 1/sqrt(cin); zero bias."""
    lim = np.sqrt(1.0 / cin)
    w = Tensor(rng.uniform(-lim, lim, size=(cin, cout)).astype(dtype), requires_grad=True)
    b = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True) if bias else None
    return LinearParams(w, b)


# ---------------------------------------------------------------------------
# convolution


def _im2col(x, k, stride, pad):
    """(n, c, h, w) -> patch matrix (n, c*k*k, l) with l = ho*wo output sites."""
    n, c, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    cols = np.empty((n, c, k, k, ho * wo), dtype=x.dtype)
    for ki in range(k):
        for kj in range(k):
            patch = x[:, :, ki:ki + stride * ho:stride, kj:kj + stride * wo:stride]
            cols[:, :, ki, kj] = patch.reshape(n, c, -1)
    return cols.reshape(n, c * k * k, ho * wo), (ho, wo)


def _col2im(dcols, xshape, k, stride, pad):
    """Adjoint of _im2col: scatter-add patch gradients back onto the image."""
    n, c, h, w = xshape
    hp, wp = h + 2 * pad, w + 2 * pad
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    dx = np.zeros((n, c, hp, wp), dtype=dcols.dtype)
    d = dcols.reshape(n, c, k, k, ho, wo)
    for ki in range(k):
        for kj in range(k):
            dx[:, :, ki:ki + stride * ho:stride, kj:kj + stride * wo:stride] += d[:, :, ki, kj]
    if pad:
        dx = dx[:, :, pad:pad + h, pad:pad + w]
    return dx


def _conv2d_backward(w2, g3, cols):
    """Weight and patch gradients for one conv layer (kept module-level so the
    self-test harness can verify a corrupted backward is caught)."""
    dw2 = np.matmul(g3, cols.swapaxes(1, 2)).sum(axis=0)
    dcols = np.matmul(w2.T, g3)
    return dw2, dcols


def conv2d(x, p, stride=1, padding=None):
    """Cross-correlation of NCHW input with Conv2dParams; padding defaults to k//2."""
    cout, cin, kh, kw = p.w.shape
    if kh != kw:
        raise ValueError("only square kernels are supported")
    n, c, h, w = x.shape
    if c != cin:
        raise ValueError(f"input has {c} channels, weight expects {cin}")
    pad = kh // 2 if padding is None else padding
    cols, (ho, wo) = _im2col(x.data, kh, stride, pad)
    w2 = p.w.data.reshape(cout, -1)
    out_data = np.matmul(w2, cols)           # (n, cout, l)
    if p.b is not None:
        out_data += p.b.data[:, None]
    out = Tensor._from_op(out_data.reshape(n, cout, ho, wo), (x, p.w, p.b))
    if out.requires_grad:
        xshape = x.shape

        def _bw():
            g3 = out.grad.reshape(n, cout, -1)
            dw2, dcols = _conv2d_backward(w2, g3, cols)
            if p.w.requires_grad:
                p.w._accum(dw2.reshape(p.w.shape))
            if p.b is not None and p.b.requires_grad:
                p.b._accum(g3.sum(axis=(0, 2)))
            if x.requires_grad:
                x._accum(_col2im(dcols, xshape, kh, stride, pad))
        out._backward = _bw
    return out


# ---------------------------------------------------------------------------
# batch norm


def batch_norm(x, p, training, momentum=0.1, eps=1e-5):
    """Per-channel batch norm over (n, h, w).

    Training mode normalizes with batch statistics (biased variance) and
    updates the running statistics in place; eval mode uses the stored
    running statistics as constants.
    """
    n, c, h, w = x.shape
    gamma = p.gamma.data.reshape(1, c, 1, 1)
    beta = p.beta.data.reshape(1, c, 1, 1)
    if training:
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        p.running_mean += momentum * (mu - p.running_mean)
        p.running_var += momentum * (var - p.running_var)
    else:
        mu = p.running_mean
        var = p.running_var
    ivar = 1.0 / np.sqrt(var + eps)
    xc = x.data - mu.reshape(1, c, 1, 1)
    xhat = xc * ivar.reshape(1, c, 1, 1)
    out = Tensor._from_op(gamma * xhat + beta, (x, p.gamma, p.beta))
    if out.requires_grad:
        m = n * h * w

        def _bw():
            g = out.grad
            if p.gamma.requires_grad:
                p.gamma._accum((g * xhat).sum(axis=(0, 2, 3)))
            if p.beta.requires_grad:
                p.beta._accum(g.sum(axis=(0, 2, 3)))
            if x.requires_grad:
                dxhat = g * gamma
                if training:
                    iv = ivar.reshape(1, c, 1, 1)
                    dvar = (dxhat * xc).sum(axis=(0, 2, 3)) * (-0.5) * ivar ** 3
                    dmu = -(dxhat.sum(axis=(0, 2, 3))) * ivar \
                        - dvar * (2.0 / m) * xc.sum(axis=(0, 2, 3))
                    dx = dxhat * iv \
                        + (2.0 / m) * xc * dvar.reshape(1, c, 1, 1) \
                        + dmu.reshape(1, c, 1, 1) / m
                else:
                    dx = dxhat * ivar.reshape(1, c, 1, 1)
                x._accum(dx)
        out._backward = _bw
    return out


# ---------------------------------------------------------------------------
# linear, softmax


def linear(x, p):
    """x (..., cin) @ w (cin, cout) + b, over the last axis."""
    out = x @ p.w
    if p.b is not None:
        out = out + p.b
    return out


def softmax(x, axis=-1):
    m = x.max(axes=axis, keepdims=True)
    e = (x - m).exp()
    return e / e.sum(axes=axis, keepdims=True)


def log_softmax(x, axis=-1):
    m = x.max(axes=axis, keepdims=True)
    z = x - m
    return z - z.exp().sum(axes=axis, keepdims=True).log()


# ---------------------------------------------------------------------------
# pooling and resizing via constant interpolation matrices


@lru_cache(maxsize=None)
def _pool_matrix(size_in, size_out, dtype_name):
    """Averaging matrix for adaptive pooling: window [floor(i*I/O), ceil((i+1)*I/O))."""
    r = np.zeros((size_out, size_in), dtype=np.float64)
    for i in range(size_out):
        lo = (i * size_in) // size_out
        hi = -((-(i + 1) * size_in) // size_out)  # ceil division
        r[i, lo:hi] = 1.0 / (hi - lo)
    return r.astype(dtype_name)


@lru_cache(maxsize=None)
def _resize_matrix(size_in, factor, mode, dtype_name):
    """Upsampling matrix mapping size_in -> size_in*factor rows."""
    size_out = size_in * factor
    r = np.zeros((size_out, size_in), dtype=np.float64)
    if mode == "nearest":
        for i in range(size_out):
            r[i, i // factor] = 1.0
    elif mode == "bilinear":
        for i in range(size_out):
            src = (i + 0.5) / factor - 0.5
            i0 = int(np.floor(src))
            frac = src - i0
            i0c = min(max(i0, 0), size_in - 1)
            i1c = min(max(i0 + 1, 0), size_in - 1)
            r[i, i0c] += 1.0 - frac
            r[i, i1c] += frac
    else:
        raise ValueError(f"unknown resize mode {mode!r}")
    return r.astype(dtype_name)


def adaptive_avg_pool2d(x, out_hw):
    """Average-pool NCHW input to an exact output size, windows from the
    floor/ceil rule (windows may overlap when sizes do not divide evenly)."""
    oh, ow = out_hw
    n, c, h, w = x.shape
    rh = _pool_matrix(h, oh, x.dtype.name)
    rw = _pool_matrix(w, ow, x.dtype.name)
    return (rh @ x) @ rw.T


def upsample(x, factor, mode="bilinear"):
    """Scale NCHW spatial dims by an integer factor.

    bilinear uses the half-pixel source mapping src = (i + 0.5)/f - 0.5 with
    edge clamping; nearest replicates src = i // f.
    """
    n, c, h, w = x.shape
    rh = _resize_matrix(h, factor, mode, x.dtype.name)
    rw = _resize_matrix(w, factor, mode, x.dtype.name)
    return (rh @ x) @ rw.T


def max_pool_global(x):
    """(n, c, h, w) -> (n, c, 1, 1), max over space; gradient to the first max."""
    n, c, h, w = x.shape
    return x.max(axes=(2, 3), keepdims=True)
