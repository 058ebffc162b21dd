"""Dense tensors with reverse-mode automatic differentiation on a numpy backend.

The graph is a dynamic tape: every operation stores its parents and a closure
that turns the output gradient into parent gradients.  ``backward()`` walks the
tape in reverse topological order.  Gradients accumulate on leaf tensors until
cleared, so calling backward twice on the same graph doubles every leaf grad.

``grad_check`` is the numerical oracle for the whole library: central finite
differences per coordinate, with exact detection (and exclusion) of coordinates
whose difference interval straddles a relu/argmax non-differentiability.
"""

from __future__ import annotations

import zlib
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

_grad_enabled = True
_kink_trace = None


@contextmanager
def no_grad():
    """Disable tape recording inside the block (values only, no graph)."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


class KinkTrace:
    """Checksum of every relu sign pattern and argmax choice in a forward pass.

    Two evaluations with equal signatures took identical branches through all
    non-differentiable points, so a finite difference between them is valid.
    """

    def __init__(self):
        self.crc = 0

    def record(self, arr):
        if arr.dtype == bool:
            arr = np.packbits(arr.reshape(-1))
        self.crc = zlib.crc32(np.ascontiguousarray(arr).tobytes(), self.crc)

    @property
    def signature(self):
        return self.crc


@contextmanager
def trace_kinks():
    global _kink_trace
    prev, _kink_trace = _kink_trace, KinkTrace()
    try:
        yield _kink_trace
    finally:
        _kink_trace = prev


def record_kink(arr):
    """Register a branch pattern (bool mask or index array) with the active trace."""
    if _kink_trace is not None:
        _kink_trace.record(arr)


def _unbroadcast(g, shape):
    """Sum g over the axes that were broadcast to reach its shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _broadcast_shape(sa, sb):
    try:
        return np.broadcast_shapes(sa, sb)
    except ValueError:
        raise ValueError(f"shapes {sa} and {sb} are not broadcast-compatible") from None


def _norm_axes(axes, ndim):
    if axes is None:
        ax = tuple(range(ndim))
    elif isinstance(axes, (int, np.integer)):
        ax = (int(axes),)
    else:
        ax = tuple(int(a) for a in axes)
    if len(ax) == 0:
        raise ValueError("empty axis set")
    norm = []
    for a in ax:
        if not -ndim <= a < ndim:
            raise ValueError(f"invalid axis {a} for rank {ndim}")
        norm.append(a % ndim)
    if len(set(norm)) != len(norm):
        raise ValueError("duplicate axes")
    return tuple(sorted(norm))


class Tensor:
    """N-dimensional float array, optionally tracked by the autodiff tape."""

    __slots__ = ("data", "requires_grad", "grad", "_backward", "_parents")
    __array_ufunc__ = None  # so ndarray <op> Tensor defers to our reflected ops

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._backward = None
        self._parents = ()

    @classmethod
    def _from_op(cls, data, parents):
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out._backward = None
        if _grad_enabled:
            out._parents = tuple(p for p in parents if p is not None and p.requires_grad)
        else:
            out._parents = ()
        out.requires_grad = bool(out._parents)
        return out

    # ------------------------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.array(g)  # own the memory; g may be a view
        else:
            self.grad += g

    # -- elementwise binary -------------------------------------------------
    @staticmethod
    def _coerce(other):
        """Return (raw value, tensor-or-None).  ndarrays and scalars are constants."""
        if isinstance(other, Tensor):
            return other.data, other
        if isinstance(other, np.ndarray) or np.isscalar(other):
            return other, None
        raise TypeError(f"unsupported operand type {type(other)!r}")

    def _binary(self, other, fwd, bwd_a, bwd_b):
        odata, ot = Tensor._coerce(other)
        if isinstance(odata, np.ndarray):
            _broadcast_shape(self.data.shape, odata.shape)
        out = Tensor._from_op(fwd(self.data, odata), (self, ot))
        if out.requires_grad:
            def _bw():
                g = out.grad
                if self.requires_grad:
                    self._accum(_unbroadcast(bwd_a(g, self.data, odata), self.data.shape))
                if ot is not None and ot.requires_grad:
                    ot._accum(_unbroadcast(bwd_b(g, self.data, odata), ot.data.shape))
            out._backward = _bw
        return out

    def __add__(self, other):
        return self._binary(other, lambda a, b: a + b,
                            lambda g, a, b: g, lambda g, a, b: g)

    __radd__ = __add__

    def __sub__(self, other):
        return self._binary(other, lambda a, b: a - b,
                            lambda g, a, b: g, lambda g, a, b: -g)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        return self._binary(other, lambda a, b: a * b,
                            lambda g, a, b: g * b, lambda g, a, b: g * a)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._binary(other, lambda a, b: a / b,
                            lambda g, a, b: g / b, lambda g, a, b: -g * a / (b * b))

    def __neg__(self):
        out = Tensor._from_op(-self.data, (self,))
        if out.requires_grad:
            def _bw():
                self._accum(-out.grad)
            out._backward = _bw
        return out

    # -- elementwise unary --------------------------------------------------
    def relu(self):
        if _kink_trace is not None:
            record_kink(self.data > 0)
        out = Tensor._from_op(np.maximum(self.data, 0), (self,))
        if out.requires_grad:
            def _bw():
                # subgradient 0 at the kink
                self._accum(out.grad * (self.data > 0))
            out._backward = _bw
        return out

    def sigmoid(self):
        x = self.data
        s = np.empty_like(x)
        pos = x >= 0
        s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        s[~pos] = ex / (1.0 + ex)
        out = Tensor._from_op(s, (self,))
        if out.requires_grad:
            def _bw():
                self._accum(out.grad * s * (1.0 - s))
            out._backward = _bw
        return out

    def exp(self):
        e = np.exp(self.data)
        out = Tensor._from_op(e, (self,))
        if out.requires_grad:
            def _bw():
                self._accum(out.grad * e)
            out._backward = _bw
        return out

    def log(self):
        out = Tensor._from_op(np.log(self.data), (self,))
        if out.requires_grad:
            def _bw():
                self._accum(out.grad / self.data)
            out._backward = _bw
        return out

    def pow(self, p):
        out = Tensor._from_op(self.data ** p, (self,))
        if out.requires_grad:
            def _bw():
                self._accum(out.grad * p * self.data ** (p - 1))
            out._backward = _bw
        return out

    # -- matmul -------------------------------------------------------------
    def __matmul__(self, other):
        odata, ot = Tensor._coerce(other)
        if self.data.ndim < 2 or np.ndim(odata) < 2:
            raise ValueError("matmul operands must have rank >= 2")
        if self.data.shape[-1] != np.shape(odata)[-2]:
            raise ValueError(
                f"matmul inner dimensions disagree: {self.data.shape} @ {np.shape(odata)}")
        _broadcast_shape(self.data.shape[:-2], np.shape(odata)[:-2])
        out = Tensor._from_op(self.data @ odata, (self, ot))
        if out.requires_grad:
            def _bw():
                g = out.grad
                if self.requires_grad:
                    self._accum(_unbroadcast(g @ odata.swapaxes(-1, -2), self.data.shape))
                if ot is not None and ot.requires_grad:
                    ot._accum(_unbroadcast(self.data.swapaxes(-1, -2) @ g, ot.data.shape))
            out._backward = _bw
        return out

    def __rmatmul__(self, other):
        # constant-ndarray @ tensor; only the tensor side gets a gradient
        if not isinstance(other, np.ndarray) or other.ndim < 2 or self.data.ndim < 2:
            raise TypeError("left matmul operand must be an ndarray of rank >= 2")
        if other.shape[-1] != self.data.shape[-2]:
            raise ValueError(
                f"matmul inner dimensions disagree: {other.shape} @ {self.data.shape}")
        out = Tensor._from_op(other @ self.data, (self,))
        if out.requires_grad:
            def _bw():
                self._accum(_unbroadcast(other.swapaxes(-1, -2) @ out.grad, self.data.shape))
            out._backward = _bw
        return out

    # -- reductions ----------------------------------------------------------
    def sum(self, axes=None, keepdims=False):
        ax = _norm_axes(axes, self.data.ndim)
        out = Tensor._from_op(np.sum(self.data, axis=ax, keepdims=keepdims), (self,))
        if out.requires_grad:
            def _bw():
                g = out.grad
                if not keepdims:
                    g = np.expand_dims(g, ax)
                self._accum(np.broadcast_to(g, self.data.shape))
            out._backward = _bw
        return out

    def mean(self, axes=None, keepdims=False):
        ax = _norm_axes(axes, self.data.ndim)
        count = int(np.prod([self.data.shape[a] for a in ax]))
        out = Tensor._from_op(np.mean(self.data, axis=ax, keepdims=keepdims), (self,))
        if out.requires_grad:
            def _bw():
                g = out.grad
                if not keepdims:
                    g = np.expand_dims(g, ax)
                self._accum(np.broadcast_to(g / count, self.data.shape))
            out._backward = _bw
        return out

    def max(self, axes=None, keepdims=False):
        ax = _norm_axes(axes, self.data.ndim)
        kept = tuple(i for i in range(self.data.ndim) if i not in ax)
        perm = kept + ax
        xt = self.data.transpose(perm)
        kshape = xt.shape[:len(kept)]
        flat = xt.reshape(kshape + (-1,))
        idx = np.argmax(flat, axis=-1)  # first occurrence wins ties
        if _kink_trace is not None:
            record_kink(np.asarray(idx, dtype=np.int64))
        vals = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
        if keepdims:
            vals = np.expand_dims(vals, ax)
        out = Tensor._from_op(vals, (self,))
        if out.requires_grad:
            inv = np.argsort(perm)
            def _bw():
                g = out.grad
                if keepdims:
                    g = g.reshape(kshape)
                gz = np.zeros_like(flat)
                np.put_along_axis(gz, idx[..., None], g[..., None], axis=-1)
                self._accum(gz.reshape(xt.shape).transpose(inv))
            out._backward = _bw
        return out

    # -- shape ops ------------------------------------------------------------
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        if -1 not in shape and int(np.prod(shape)) != self.data.size:
            raise ValueError(f"cannot reshape {self.data.shape} into {shape}")
        old = self.data.shape
        out = Tensor._from_op(self.data.reshape(shape), (self,))
        if out.requires_grad:
            def _bw():
                self._accum(out.grad.reshape(old))
            out._backward = _bw
        return out

    def permute(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if sorted(axes) != list(range(self.data.ndim)):
            raise ValueError(f"{axes} is not a permutation of rank {self.data.ndim}")
        inv = np.argsort(axes)
        out = Tensor._from_op(self.data.transpose(axes), (self,))
        if out.requires_grad:
            def _bw():
                self._accum(out.grad.transpose(inv))
            out._backward = _bw
        return out

    # -- backward ------------------------------------------------------------
    def backward(self, free_graph=False):
        """Seed d(self)/d(self)=1 and accumulate gradients into every leaf.

        ``self`` must hold exactly one element.  Leaf gradients accumulate
        across calls; intermediate gradients are recomputed fresh each call.
        With ``free_graph`` the tape is dropped afterwards, releasing memory
        held by closures (the graph cannot be backpropped again).
        """
        if self.data.size != 1:
            raise ValueError("backward seed must be a scalar tensor")
        order = _topo_order(self)
        for node in order:
            if node._parents:
                node.grad = None
        self._accum(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None:
                node._backward()
        if free_graph:
            for node in order:
                if node._parents:
                    node._backward = None
                    node._parents = ()
                    node.grad = None


def _topo_order(root):
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


# ---------------------------------------------------------------------------
# finite-difference oracle


@dataclass
class GradReport:
    """Result of comparing tape gradients against central differences."""

    max_abs_error: float
    max_rel_error: float
    per_parameter_errors: dict
    flagged: dict   # name -> coordinates excluded (difference interval hit a kink)
    checked: dict   # name -> coordinates actually compared


def grad_check(f, x, eps=1e-4, max_per_tensor=None, seed=0, denom_floor=1e-6):
    """Check d f(x) / dx against (f(x+eps e) - f(x-eps e)) / 2 eps per coordinate.

    ``x`` is a Tensor or a dict of named Tensors (all float64); ``f`` maps it to
    a scalar Tensor and must be deterministic.  Coordinates whose difference
    interval crosses a relu/argmax branch are excluded and counted in
    ``flagged`` rather than failed.  ``max_per_tensor`` caps the coordinates
    checked per tensor (sampled with a seeded rng) to bound runtime.

    Relative error uses denominator max(|analytic|, |numeric|, denom_floor).
    """
    params = {"x": x} if isinstance(x, Tensor) else dict(x)
    for name, t in params.items():
        if t.data.dtype != np.float64:
            raise TypeError(f"grad_check requires float64 tensors, got {t.data.dtype} for {name!r}")
    old_flags = {name: t.requires_grad for name, t in params.items()}
    for t in params.values():
        t.requires_grad = True
        t.grad = None
    try:
        with trace_kinks() as tr:
            y = f(x)
        if y.data.size != 1:
            raise ValueError("grad_check target must return a scalar tensor")
        if not np.isfinite(float(y.data)):
            raise ValueError("non-finite function value")
        base_sig = tr.signature
        y.backward()
        analytic = {name: (np.zeros_like(t.data) if t.grad is None else np.array(t.grad))
                    for name, t in params.items()}

        rng = np.random.default_rng(seed)
        per_err, flagged, checked = {}, {}, {}
        max_abs = 0.0
        max_rel = 0.0
        for name, t in params.items():
            flat = t.data.reshape(-1)
            n = flat.size
            if max_per_tensor is not None and n > max_per_tensor:
                coords = np.sort(rng.choice(n, size=max_per_tensor, replace=False))
            else:
                coords = np.arange(n)
            ana_flat = analytic[name].reshape(-1)
            worst = 0.0
            nflag = 0
            ncheck = 0
            for c in coords:
                old = flat[c]
                flat[c] = old + eps
                with no_grad(), trace_kinks() as trp:
                    yp = float(f(x).data)
                flat[c] = old - eps
                with no_grad(), trace_kinks() as trm:
                    ym = float(f(x).data)
                flat[c] = old
                if trp.signature != base_sig or trm.signature != base_sig:
                    nflag += 1
                    continue
                if not (np.isfinite(yp) and np.isfinite(ym)):
                    raise ValueError("non-finite function value")
                numeric = (yp - ym) / (2.0 * eps)
                ana = float(ana_flat[c])
                aerr = abs(ana - numeric)
                rerr = aerr / max(abs(ana), abs(numeric), denom_floor)
                worst = max(worst, rerr)
                max_abs = max(max_abs, aerr)
                max_rel = max(max_rel, rerr)
                ncheck += 1
            per_err[name] = worst
            flagged[name] = nflag
            checked[name] = ncheck
    finally:
        for name, t in params.items():
            t.requires_grad = old_flags[name]
    return GradReport(max_abs, max_rel, per_err, flagged, checked)
