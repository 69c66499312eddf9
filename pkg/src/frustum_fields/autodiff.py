"""Reverse-mode automatic differentiation over dense numpy grids.

A ``Tape`` records every primitive applied to tracked ``DiffGrid`` values
during one forward pass and replays the record in reverse to accumulate
exact vector-Jacobian products.  The primitive set is deliberately small:
elementwise arithmetic and activations, axis reductions and cumulative
sums, softmax, linear gathers (the backbone of trilinear/bilinear
interpolation), dense affine maps, kernel-3 zero-padded 3D convolution,
and a separable valid-region Gaussian blur.

Storage precision is a process-global setting: 32-bit by default, 64-bit
for finite-difference verification (see :func:`set_precision`).  Every
primitive checks its output for NaN/Inf and raises :class:`NumericError`
naming the offending op, so a diverging optimization fails loudly at the
first bad tensor.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable

import numpy as np
from scipy.ndimage import correlate1d
from scipy.special import expit


class ContractViolation(ValueError):
    """An operation was called outside its documented contract."""


class ConfigError(ValueError):
    """Invalid configuration value (bad hyperparameter, bad file, ...)."""


class NumericError(ArithmeticError):
    """A primitive produced non-finite values; ``op`` names the culprit."""

    def __init__(self, op: str, message: str | None = None):
        self.op = op
        super().__init__(message or f"non-finite values in output of '{op}'")


# ---------------------------------------------------------------------------
# Precision control
# ---------------------------------------------------------------------------

_DTYPE = np.float32


def set_precision(bits: int) -> None:
    """Select global storage precision: 32 (default) or 64."""
    global _DTYPE
    if bits == 32:
        _DTYPE = np.float32
    elif bits == 64:
        _DTYPE = np.float64
    else:
        raise ConfigError(f"precision must be 32 or 64, got {bits}")


def get_precision() -> int:
    return 64 if _DTYPE is np.float64 else 32


def dtype() -> np.dtype:
    return np.dtype(_DTYPE)


class precision:
    """Context manager pinning the global precision, e.g. ``with precision(64):``."""

    def __init__(self, bits: int):
        self.bits = bits
        self._saved = None

    def __enter__(self):
        self._saved = get_precision()
        set_precision(self.bits)
        return self

    def __exit__(self, *exc):
        set_precision(self._saved)
        return False


# ---------------------------------------------------------------------------
# DiffGrid and Tape
# ---------------------------------------------------------------------------


class DiffGrid:
    """Dense N-d array of scalars, optionally tracked on the active tape.

    ``node`` is None for constants; tracked grids carry the id of the tape
    node that produced them.  Values are plain numpy arrays in the global
    storage precision.
    """

    __slots__ = ("values", "node")

    def __init__(self, values, node: int | None = None):
        self.values = np.asarray(values, dtype=_DTYPE)
        self.node = node

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        return float(self.values.reshape(-1)[0])

    def __repr__(self):
        return f"DiffGrid(shape={self.shape}, node={self.node})"

    # arithmetic sugar (delegates to module primitives)
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)


class _Entry:
    __slots__ = ("out_id", "vjp")

    def __init__(self, out_id: int, vjp: Callable[[np.ndarray], Iterable]):
        self.out_id = out_id
        self.vjp = vjp


_ACTIVE: "Tape | None" = None


class Tape:
    """Computation record for one forward/backward pass.

    Entries are appended in execution order (hence topologically sorted);
    :meth:`backward` walks them exactly once in reverse.  One tape per
    optimization step; create a fresh one instead of reusing.
    """

    def __init__(self):
        self._entries: list[_Entry] = []
        self._leaves: list[int] = []
        self._leaf_shapes: dict[int, tuple] = {}
        self._next_id = 0

    def __enter__(self):
        global _ACTIVE
        if _ACTIVE is not None:
            raise ContractViolation("a Tape is already active")
        _ACTIVE = self
        return self

    def __exit__(self, *exc):
        global _ACTIVE
        _ACTIVE = None
        return False

    def _new_node(self) -> int:
        nid = self._next_id
        self._next_id += 1
        return nid

    def param(self, values) -> DiffGrid:
        """Register a leaf (trainable input) and return its tracked grid."""
        arr = np.array(values, dtype=_DTYPE)
        nid = self._new_node()
        self._leaves.append(nid)
        self._leaf_shapes[nid] = arr.shape
        return DiffGrid(arr, nid)

    def __len__(self):
        return len(self._entries)

    def backward(self, loss: DiffGrid) -> dict[int, np.ndarray]:
        """Return d(loss)/d(leaf) for every registered leaf.

        Leaves that do not influence the loss get exact zero grids.
        Intermediate cotangents are freed as soon as they are consumed.
        """
        if not isinstance(loss, DiffGrid) or loss.node is None:
            raise ContractViolation("loss must be a tracked DiffGrid")
        if loss.values.size != 1:
            raise ContractViolation(
                f"loss must be scalar (size 1), got shape {loss.shape}"
            )
        grads: dict[int, np.ndarray] = {loss.node: np.ones_like(loss.values)}
        for entry in reversed(self._entries):
            g = grads.pop(entry.out_id, None)
            if g is None:
                continue
            for nid, gi in entry.vjp(g):
                acc = grads.get(nid)
                grads[nid] = gi if acc is None else acc + gi
        out = {}
        for nid in self._leaves:
            g = grads.get(nid)
            if g is None:
                g = np.zeros(self._leaf_shapes[nid], dtype=_DTYPE)
            out[nid] = np.asarray(g, dtype=_DTYPE)
        return out

    def grad(self, loss: DiffGrid, wrt: Iterable[DiffGrid]) -> list[np.ndarray]:
        """Convenience wrapper: gradients for an explicit list of leaves."""
        table = self.backward(loss)
        out = []
        for g in wrt:
            if g.node is None:
                raise ContractViolation("gradient of a constant requested")
            out.append(table[g.node])
        return out


# ---------------------------------------------------------------------------
# Helpers shared by the primitives
# ---------------------------------------------------------------------------


def _wrap(x) -> DiffGrid:
    if isinstance(x, DiffGrid):
        return x
    return DiffGrid(np.asarray(x, dtype=_DTYPE))


def value(x) -> np.ndarray:
    """Underlying numpy array of a DiffGrid (or pass arrays through)."""
    return x.values if isinstance(x, DiffGrid) else np.asarray(x)


def _check_finite(op: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(op)


def _make(out_values, op: str, tracked: bool, vjp) -> DiffGrid:
    _check_finite(op, out_values)
    t = _ACTIVE
    if t is None or not tracked:
        return DiffGrid(np.asarray(out_values, dtype=_DTYPE))
    nid = t._new_node()
    t._entries.append(_Entry(nid, vjp))
    return DiffGrid(np.asarray(out_values, dtype=_DTYPE), nid)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a cotangent back down to the shape of a broadcast input."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _binary_forward(op: str, a: DiffGrid, b: DiffGrid, fn) -> np.ndarray:
    try:
        return fn(a.values, b.values)
    except ValueError as e:
        raise ContractViolation(
            f"{op}: incompatible shapes {a.shape} vs {b.shape}"
        ) from e


# ---------------------------------------------------------------------------
# Elementwise primitives
# ---------------------------------------------------------------------------


def add(a, b) -> DiffGrid:
    a, b = _wrap(a), _wrap(b)
    out = _binary_forward("add", a, b, np.add)
    an, bn = a.node, b.node
    ash, bsh = a.shape, b.shape

    def vjp(g):
        pairs = []
        if an is not None:
            pairs.append((an, _unbroadcast(g, ash)))
        if bn is not None:
            pairs.append((bn, _unbroadcast(g, bsh)))
        return pairs

    return _make(out, "add", an is not None or bn is not None, vjp)


def sub(a, b) -> DiffGrid:
    a, b = _wrap(a), _wrap(b)
    out = _binary_forward("sub", a, b, np.subtract)
    an, bn = a.node, b.node
    ash, bsh = a.shape, b.shape

    def vjp(g):
        pairs = []
        if an is not None:
            pairs.append((an, _unbroadcast(g, ash)))
        if bn is not None:
            pairs.append((bn, _unbroadcast(-g, bsh)))
        return pairs

    return _make(out, "sub", an is not None or bn is not None, vjp)


def mul(a, b) -> DiffGrid:
    a, b = _wrap(a), _wrap(b)
    out = _binary_forward("mul", a, b, np.multiply)
    an, bn = a.node, b.node
    av, bv = a.values, b.values

    def vjp(g):
        pairs = []
        if an is not None:
            pairs.append((an, _unbroadcast(g * bv, av.shape)))
        if bn is not None:
            pairs.append((bn, _unbroadcast(g * av, bv.shape)))
        return pairs

    return _make(out, "mul", an is not None or bn is not None, vjp)


def div(a, b) -> DiffGrid:
    a, b = _wrap(a), _wrap(b)
    out = _binary_forward("div", a, b, np.divide)
    an, bn = a.node, b.node
    av, bv = a.values, b.values

    def vjp(g):
        pairs = []
        if an is not None:
            pairs.append((an, _unbroadcast(g / bv, av.shape)))
        if bn is not None:
            pairs.append((bn, _unbroadcast(-g * av / (bv * bv), bv.shape)))
        return pairs

    return _make(out, "div", an is not None or bn is not None, vjp)


def neg(a) -> DiffGrid:
    a = _wrap(a)
    an = a.node

    def vjp(g):
        return [(an, -g)]

    return _make(-a.values, "neg", an is not None, vjp)


def exp(a) -> DiffGrid:
    a = _wrap(a)
    out = np.exp(a.values)
    an = a.node

    def vjp(g):
        return [(an, g * out)]

    return _make(out, "exp", an is not None, vjp)


def expm1(a) -> DiffGrid:
    a = _wrap(a)
    out = np.expm1(a.values)
    an = a.node

    def vjp(g):
        return [(an, g * (out + 1.0))]

    return _make(out, "expm1", an is not None, vjp)


def tanh(a) -> DiffGrid:
    a = _wrap(a)
    out = np.tanh(a.values)
    an = a.node

    def vjp(g):
        return [(an, g * (1.0 - out * out))]

    return _make(out, "tanh", an is not None, vjp)


def softplus(a) -> DiffGrid:
    a = _wrap(a)
    av = a.values
    out = np.logaddexp(np.asarray(0.0, dtype=av.dtype), av)
    an = a.node

    def vjp(g):
        return [(an, g * expit(av))]

    return _make(out, "softplus", an is not None, vjp)


def sigmoid(a) -> DiffGrid:
    a = _wrap(a)
    out = expit(a.values)
    an = a.node

    def vjp(g):
        return [(an, g * out * (1.0 - out))]

    return _make(out, "sigmoid", an is not None, vjp)


def absval(a) -> DiffGrid:
    a = _wrap(a)
    av = a.values
    an = a.node

    def vjp(g):
        return [(an, g * np.sign(av))]

    return _make(np.abs(av), "absval", an is not None, vjp)


def smooth_l1(a, beta: float = 1.0) -> DiffGrid:
    """Huber-style penalty: 0.5 x^2 / beta inside |x| < beta, |x| - beta/2 outside."""
    if beta <= 0:
        raise ContractViolation("smooth_l1 transition must be positive")
    a = _wrap(a)
    av = a.values
    absx = np.abs(av)
    out = np.where(absx < beta, 0.5 * av * av / beta, absx - 0.5 * beta)
    an = a.node

    def vjp(g):
        return [(an, g * np.clip(av / beta, -1.0, 1.0))]

    return _make(out.astype(av.dtype), "smooth_l1", an is not None, vjp)


def laplace_cdf(a, beta) -> DiffGrid:
    """CDF of the zero-mean Laplace distribution with scale ``beta``.

    Differentiable in both the argument and the scale; ``beta`` broadcasts
    against ``a`` (typically a scalar grid).
    """
    a, beta = _wrap(a), _wrap(beta)
    av, bv = a.values, beta.values
    if np.any(bv <= 0):
        raise ContractViolation("laplace_cdf requires beta > 0")
    t = av / bv
    half_tail = 0.5 * np.exp(-np.abs(t))
    out = np.where(t <= 0, half_tail, 1.0 - half_tail)
    an, bn = a.node, beta.node

    def vjp(g):
        pairs = []
        if an is not None:
            pairs.append((an, _unbroadcast(g * half_tail / bv, av.shape)))
        if bn is not None:
            pairs.append((bn, _unbroadcast(-g * half_tail * av / (bv * bv), bv.shape)))
        return pairs

    return _make(out.astype(av.dtype), "laplace_cdf", an is not None or bn is not None, vjp)


# ---------------------------------------------------------------------------
# Shape primitives
# ---------------------------------------------------------------------------


def broadcast_to(a, shape) -> DiffGrid:
    a = _wrap(a)
    try:
        out = np.broadcast_to(a.values, shape)
    except ValueError as e:
        raise ContractViolation(f"cannot broadcast {a.shape} to {shape}") from e
    an = a.node
    ash = a.shape

    def vjp(g):
        return [(an, _unbroadcast(g, ash))]

    return _make(out, "broadcast_to", an is not None, vjp)


def reshape(a, shape) -> DiffGrid:
    a = _wrap(a)
    out = a.values.reshape(shape)
    an = a.node
    ash = a.shape

    def vjp(g):
        return [(an, g.reshape(ash))]

    return _make(out, "reshape", an is not None, vjp)


def slice_axis(a, axis: int, start: int, stop: int) -> DiffGrid:
    """Narrow one axis to [start, stop)."""
    a = _wrap(a)
    idx = [slice(None)] * a.values.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    out = a.values[idx]
    an = a.node
    ash = a.shape

    def vjp(g):
        full = np.zeros(ash, dtype=g.dtype)
        full[idx] = g
        return [(an, full)]

    return _make(out, "slice_axis", an is not None, vjp)


# ---------------------------------------------------------------------------
# Reductions, scans, softmax
# ---------------------------------------------------------------------------


def reduce_sum(a, axis: int, keepdims: bool = False) -> DiffGrid:
    a = _wrap(a)
    out = a.values.sum(axis=axis, keepdims=keepdims)
    an = a.node
    ash = a.shape

    def vjp(g):
        gk = g if keepdims else np.expand_dims(g, axis)
        return [(an, np.broadcast_to(gk, ash))]

    return _make(out, "reduce_sum", an is not None, vjp)


def sum_all(a) -> DiffGrid:
    """Sum every element into a shape-(1,) scalar grid."""
    a = _wrap(a)
    out = a.values.sum().reshape(1)
    an = a.node
    ash = a.shape

    def vjp(g):
        return [(an, np.broadcast_to(g.reshape(()), ash))]

    return _make(out, "sum_all", an is not None, vjp)


def mean_all(a) -> DiffGrid:
    a = _wrap(a)
    n = max(a.values.size, 1)
    return mul(sum_all(a), 1.0 / n)


def cumsum(a, axis: int) -> DiffGrid:
    a = _wrap(a)
    out = np.cumsum(a.values, axis=axis)
    an = a.node

    def vjp(g):
        # d/dx_j sum over i>=j of g_i: reversed inclusive cumsum
        return [(an, np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis))]

    return _make(out, "cumsum", an is not None, vjp)


def cumsum_exclusive(a, axis: int) -> DiffGrid:
    """y_i = sum of x_j for j < i (y_0 = 0)."""
    a = _wrap(a)
    av = a.values
    inc = np.cumsum(av, axis=axis)
    out = np.zeros_like(av)
    head = [slice(None)] * av.ndim
    head[axis] = slice(1, None)
    tail = [slice(None)] * av.ndim
    tail[axis] = slice(0, -1)
    out[tuple(head)] = inc[tuple(tail)]
    an = a.node

    def vjp(g):
        rev_inc = np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis)
        return [(an, rev_inc - g)]

    return _make(out, "cumsum_exclusive", an is not None, vjp)


def softmax(a, axis: int) -> DiffGrid:
    """Numerically stable softmax (max-subtracted) along one axis."""
    a = _wrap(a)
    av = a.values
    shifted = av - av.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)
    an = a.node

    def vjp(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return [(an, out * (g - dot))]

    return _make(out, "softmax", an is not None, vjp)


# ---------------------------------------------------------------------------
# Gather / affine / convolution / blur
# ---------------------------------------------------------------------------

_GATHER_CHUNK = 1 << 18


def gather_linear(grid, idx: np.ndarray, weights: np.ndarray) -> DiffGrid:
    """Weighted gather: out[p] = sum_k weights[p, k] * grid[idx[p, k]].

    ``grid`` has shape (N, C); ``idx`` is (P, K) int64 with -1 marking
    entries that contribute exactly zero (out-of-support corners).  This is
    the single primitive behind trilinear and bilinear interpolation; the
    cotangent is scatter-added back onto the grid rows.
    """
    grid = _wrap(grid)
    gv = grid.values
    if gv.ndim != 2:
        raise ContractViolation("gather_linear expects a (N, C) grid")
    idx = np.asarray(idx, dtype=np.int64)
    weights = np.asarray(weights, dtype=gv.dtype)
    if idx.shape != weights.shape or idx.ndim != 2:
        raise ContractViolation("gather_linear: idx and weights must be (P, K)")
    if idx.size and idx.max() >= gv.shape[0]:
        raise ContractViolation("gather_linear: index out of range")
    n, c = gv.shape
    p, k = idx.shape
    out = np.zeros((p, c), dtype=gv.dtype)
    safe = np.maximum(idx, 0)
    live = (idx >= 0).astype(gv.dtype)
    for lo in range(0, p, _GATHER_CHUNK):
        hi = min(lo + _GATHER_CHUNK, p)
        for j in range(k):
            w = (weights[lo:hi, j] * live[lo:hi, j])[:, None]
            out[lo:hi] += w * gv[safe[lo:hi, j]]
    gn = grid.node

    def vjp(g):
        acc = np.zeros((n, c), dtype=np.float64)
        for lo in range(0, p, _GATHER_CHUNK):
            hi = min(lo + _GATHER_CHUNK, p)
            for j in range(k):
                rows = idx[lo:hi, j]
                keep = rows >= 0
                if not np.any(keep):
                    continue
                vals = g[lo:hi][keep] * weights[lo:hi, j][keep, None]
                tgt = rows[keep]
                for ch in range(c):
                    acc[:, ch] += np.bincount(tgt, weights=vals[:, ch], minlength=n)
        return [(gn, acc.astype(gv.dtype))]

    return _make(out, "gather_linear", gn is not None, vjp)


def affine(x, w, b=None) -> DiffGrid:
    """Dense map over the last axis: y = x @ w + b."""
    x, w = _wrap(x), _wrap(w)
    bg = _wrap(b) if b is not None else None
    xv, wv = x.values, w.values
    if xv.shape[-1] != wv.shape[0]:
        raise ContractViolation(
            f"affine: input dim {xv.shape[-1]} != weight rows {wv.shape[0]}"
        )
    out = np.matmul(xv, wv)
    if bg is not None:
        out = out + bg.values
    xn, wn = x.node, w.node
    bn = bg.node if bg is not None else None

    def vjp(g):
        pairs = []
        if xn is not None:
            pairs.append((xn, np.matmul(g, wv.T)))
        if wn is not None:
            gf = g.reshape(-1, wv.shape[1])
            xf = xv.reshape(-1, wv.shape[0])
            pairs.append((wn, xf.T @ gf))
        if bn is not None:
            pairs.append((bn, g.reshape(-1, wv.shape[1]).sum(axis=0)))
        return pairs

    tracked = xn is not None or wn is not None or bn is not None
    return _make(out, "affine", tracked, vjp)


def conv3d(x, w, b=None) -> DiffGrid:
    """Kernel-3, stride-1, zero-padded 3D convolution over the first 3 axes.

    x: (H, W, D, Cin), w: (3, 3, 3, Cin, Cout), b: (Cout,) or None.
    Output keeps the spatial shape: (H, W, D, Cout).
    """
    x, w = _wrap(x), _wrap(w)
    bg = _wrap(b) if b is not None else None
    xv, wv = x.values, w.values
    if xv.ndim != 4 or wv.shape[:3] != (3, 3, 3) or wv.shape[3] != xv.shape[3]:
        raise ContractViolation(
            f"conv3d: bad shapes x={xv.shape}, w={wv.shape}"
        )
    h, ww_, d, ci = xv.shape
    co = wv.shape[4]
    xp = np.zeros((h + 2, ww_ + 2, d + 2, ci), dtype=xv.dtype)
    xp[1:-1, 1:-1, 1:-1] = xv
    out = np.zeros((h, ww_, d, co), dtype=xv.dtype)
    for i in range(3):
        for j in range(3):
            for kk in range(3):
                out += np.matmul(xp[i:i + h, j:j + ww_, kk:kk + d], wv[i, j, kk])
    if bg is not None:
        out += bg.values
    xn, wn = x.node, w.node
    bn = bg.node if bg is not None else None

    def vjp(g):
        pairs = []
        if xn is not None:
            gp = np.zeros((h + 2, ww_ + 2, d + 2, ci), dtype=g.dtype)
            for i in range(3):
                for j in range(3):
                    for kk in range(3):
                        gp[i:i + h, j:j + ww_, kk:kk + d] += np.matmul(g, wv[i, j, kk].T)
            pairs.append((xn, gp[1:-1, 1:-1, 1:-1]))
        if wn is not None:
            gw = np.empty_like(wv)
            for i in range(3):
                for j in range(3):
                    for kk in range(3):
                        gw[i, j, kk] = np.tensordot(
                            xp[i:i + h, j:j + ww_, kk:kk + d], g,
                            axes=([0, 1, 2], [0, 1, 2]),
                        )
            pairs.append((wn, gw))
        if bn is not None:
            pairs.append((bn, g.sum(axis=(0, 1, 2))))
        return pairs

    tracked = xn is not None or wn is not None or bn is not None
    return _make(out, "conv3d", tracked, vjp)


def gauss_blur_valid(x, kernel: np.ndarray) -> DiffGrid:
    """Separable blur over the leading two axes, valid region only.

    x: (H, W) or (H, W, C); kernel: odd-length 1D window (not differentiated).
    Output is cropped to (H-K+1, W-K+1[, C]).
    """
    x = _wrap(x)
    xv = x.values
    kernel = np.asarray(kernel, dtype=xv.dtype)
    ksz = kernel.shape[0]
    if ksz % 2 != 1:
        raise ContractViolation("blur kernel length must be odd")
    if xv.shape[0] < ksz or xv.shape[1] < ksz:
        raise ContractViolation(
            f"image {xv.shape[:2]} smaller than blur window {ksz}"
        )
    r = ksz // 2
    full = correlate1d(xv, kernel, axis=0, mode="constant", cval=0.0)
    full = correlate1d(full, kernel, axis=1, mode="constant", cval=0.0)
    out = full[r:xv.shape[0] - r, r:xv.shape[1] - r]
    xn = x.node
    ash = xv.shape
    flipped = kernel[::-1].copy()

    def vjp(g):
        gp = np.zeros(ash, dtype=g.dtype)
        gp[r:ash[0] - r, r:ash[1] - r] = g
        gp = correlate1d(gp, flipped, axis=0, mode="constant", cval=0.0)
        gp = correlate1d(gp, flipped, axis=1, mode="constant", cval=0.0)
        return [(xn, gp)]

    return _make(np.ascontiguousarray(out), "gauss_blur_valid", xn is not None, vjp)


# ---------------------------------------------------------------------------
# Optimizer (decoupled weight decay Adam) and gradient clipping
# ---------------------------------------------------------------------------


def adam_init(params: dict[str, np.ndarray]) -> dict:
    """Zeroed first/second moment buffers matching a parameter dict."""
    return {
        "m": {k: np.zeros_like(v) for k, v in params.items()},
        "v": {k: np.zeros_like(v) for k, v in params.items()},
    }


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: dict,
    *,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
    t: int,
    no_decay: frozenset | set | tuple = (),
) -> tuple[dict, dict]:
    """One decoupled-weight-decay Adam update (in place; also returned).

    ``t`` is the 1-based step index used for bias correction.  Parameters
    named in ``no_decay`` skip the weight-decay term.
    """
    if lr <= 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    if t < 1:
        raise ContractViolation("adam_step requires t >= 1")
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ContractViolation(
                f"adam_step: grad shape {g.shape} != param shape {p.shape} for '{name}'"
            )
        m = state["m"][name]
        v = state["v"][name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        update = (m / c1) / (np.sqrt(v / c2) + eps)
        if weight_decay != 0.0 and name not in no_decay:
            update = update + weight_decay * p
        p -= (lr * update).astype(p.dtype)
    return params, state


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients in place so their joint L2 norm is <= max_norm."""
    total = 0.0
    for g in grads.values():
        total += float(np.sum(np.asarray(g, dtype=np.float64) ** 2))
    norm = math.sqrt(total)
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm
