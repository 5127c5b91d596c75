"""Reverse-mode automatic differentiation on dense numpy arrays.

Every operation appends one record to a global tape as it executes, so the
tape order is already a topological order of the computation graph.
`backward` walks the records once in reverse.  There is no graph pruning or
retained-graph mode: after a backward pass the tape must be reset before the
next forward pass, and calling backward twice on the same tape is an error.

Only float32 and float64 tensors exist.  Binary ops require matching dtypes
and broadcast with numpy's trailing-dimension rule; the backward pass sums
gradients over broadcast dimensions.  Range violations (exp overflow, log of
a non-positive value, division by zero) raise FloatingPointError eagerly
with the first offending flat index, instead of letting NaNs propagate.
"""

from __future__ import annotations

import contextlib
import os

import numpy as np

_DTYPES = (np.float32, np.float64)

# Fault injection for exercising the self-verification path: when armed, the
# tanh backward deliberately flips sign, which every gradient check must
# catch.  Controlled by set_fault() or the FCFP_FAULT environment variable.
_FAULT = os.environ.get("FCFP_FAULT", "") or None
_KNOWN_FAULTS = ("tanh-backward",)


def set_fault(name: str | None) -> None:
    global _FAULT
    if name is not None and name not in _KNOWN_FAULTS:
        raise ValueError(f"unknown fault {name!r}; known: {_KNOWN_FAULTS}")
    _FAULT = name


class Tape:
    """Execution-ordered op records for one forward pass."""

    def __init__(self):
        self.records: list[tuple] = []  # (out, inputs, vjp)
        self.epoch = 0
        self.consumed = False

    def reset(self) -> None:
        self.records.clear()
        self.epoch += 1
        self.consumed = False


_TAPE = Tape()
_GRAD_ENABLED = True


def tape() -> Tape:
    return _TAPE


def reset_tape() -> None:
    _TAPE.reset()


@contextlib.contextmanager
def no_grad():
    """Disable recording; outputs inside the block never require grad."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _as_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data)
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    if arr.dtype.type not in _DTYPES:
        if np.issubdtype(arr.dtype, np.floating) or np.issubdtype(arr.dtype, np.integer) or np.issubdtype(arr.dtype, np.bool_):
            arr = arr.astype(np.float64)
        else:
            raise ValueError(f"unsupported dtype {arr.dtype}; only float32/float64 tensors exist")
    return arr


class Tensor:
    """A dense array plus an optional gradient of identical shape and dtype."""

    __slots__ = ("data", "requires_grad", "grad", "_node_epoch")

    def __init__(self, data, dtype=None, requires_grad: bool = False):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._node_epoch: int | None = None  # set when recorded as an op output

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.item())

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    # -- operators -------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(_lift(other, self), self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_lift(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(_lift(other, self), self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_lift(other, self), self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)

    def backward(self):
        backward(self)


def _lift(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.data.dtype))


def _record(out: Tensor, inputs: tuple, vjp) -> Tensor:
    if _GRAD_ENABLED and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._node_epoch = _TAPE.epoch
        _TAPE.records.append((out, inputs, vjp))
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if g.shape != t.data.shape:
        raise ValueError(f"vjp produced shape {g.shape} for input of shape {t.data.shape}")
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype)
    else:
        t.grad += g


def backward(root: Tensor) -> None:
    """Backpropagate from a scalar through the current tape, once."""
    if root.data.size != 1:
        raise ValueError(f"backward requires a scalar, got shape {root.shape}")
    if root._node_epoch is not None and root._node_epoch != _TAPE.epoch:
        raise RuntimeError("backward on a tensor from a stale tape; it was produced before the last reset_tape()")
    if _TAPE.consumed:
        raise RuntimeError("tape already consumed by a previous backward; call reset_tape() and rebuild the graph")
    _TAPE.consumed = True
    root.grad = np.ones_like(root.data)
    for out, inputs, vjp in reversed(_TAPE.records):
        if out.grad is None:
            continue
        grads = vjp(out.grad)
        for t, g in zip(inputs, grads):
            if g is None or not t.requires_grad:
                continue
            _accumulate(t, g)


# -- elementwise unary ---------------------------------------------------


def _first_bad_index(mask: np.ndarray) -> int:
    return int(np.flatnonzero(mask)[0])


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    out = Tensor(y)

    def vjp(g):
        if _FAULT == "tanh-backward":
            return (g * (y * y - 1.0),)
        return (g * (1.0 - y * y),)

    return _record(out, (x,), vjp)


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        y = np.exp(x.data)
    if not np.all(np.isfinite(y)):
        idx = _first_bad_index(~np.isfinite(y).ravel())
        raise FloatingPointError(f"exp overflow at flat index {idx} (input {x.data.ravel()[idx]!r})")
    out = Tensor(y)

    def vjp(g):
        return (g * y,)

    return _record(out, (x,), vjp)


def sin(x: Tensor) -> Tensor:
    out = Tensor(np.sin(x.data))
    cx = np.cos(x.data)

    def vjp(g):
        return (g * cx,)

    return _record(out, (x,), vjp)


def cos(x: Tensor) -> Tensor:
    out = Tensor(np.cos(x.data))
    sx = np.sin(x.data)

    def vjp(g):
        return (g * -sx,)

    return _record(out, (x,), vjp)


def relu(x: Tensor) -> Tensor:
    y = np.maximum(x.data, 0)
    out = Tensor(y)
    mask = x.data > 0  # subgradient 0 at the kink

    def vjp(g):
        return (g * mask,)

    return _record(out, (x,), vjp)


def neg(x: Tensor) -> Tensor:
    out = Tensor(-x.data)

    def vjp(g):
        return (-g,)

    return _record(out, (x,), vjp)


def log(x: Tensor) -> Tensor:
    bad = x.data <= 0
    if bad.any():
        idx = _first_bad_index(bad.ravel())
        raise FloatingPointError(f"log of non-positive value at flat index {idx} (input {x.data.ravel()[idx]!r})")
    out = Tensor(np.log(x.data))
    xd = x.data

    def vjp(g):
        return (g / xd,)

    return _record(out, (x,), vjp)


def sqrt(x: Tensor) -> Tensor:
    bad = x.data < 0
    if bad.any():
        idx = _first_bad_index(bad.ravel())
        raise FloatingPointError(f"sqrt of negative value at flat index {idx} (input {x.data.ravel()[idx]!r})")
    y = np.sqrt(x.data)
    out = Tensor(y)

    def vjp(g):
        # subgradient 0 where x == 0; avoids NaN from the 1/(2*sqrt) pole
        dx = np.zeros_like(y)
        nz = y > 0
        dx[nz] = g[nz] * (0.5 / y[nz])
        return (dx,)

    return _record(out, (x,), vjp)


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    y = np.clip(x.data, lo, hi)
    out = Tensor(y)
    mask = (x.data >= lo) & (x.data <= hi)

    def vjp(g):
        return (g * mask,)

    return _record(out, (x,), vjp)


# -- elementwise binary --------------------------------------------------


def _check_binary(a: Tensor, b: Tensor) -> None:
    if a.data.dtype != b.data.dtype:
        raise ValueError(f"dtype mismatch: {a.data.dtype} vs {b.data.dtype}")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a: Tensor, b) -> Tensor:
    b = _lift(b, a)
    _check_binary(a, b)
    out = Tensor(a.data + b.data)

    def vjp(g):
        return (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape))

    return _record(out, (a, b), vjp)


def sub(a: Tensor, b) -> Tensor:
    b = _lift(b, a)
    _check_binary(a, b)
    out = Tensor(a.data - b.data)

    def vjp(g):
        return (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape))

    return _record(out, (a, b), vjp)


def mul(a: Tensor, b) -> Tensor:
    b = _lift(b, a)
    _check_binary(a, b)
    out = Tensor(a.data * b.data)
    ad, bd = a.data, b.data

    def vjp(g):
        return (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape))

    return _record(out, (a, b), vjp)


def div(a: Tensor, b) -> Tensor:
    b = _lift(b, a)
    _check_binary(a, b)
    if (b.data == 0).any():
        idx = _first_bad_index((b.data == 0).ravel())
        raise FloatingPointError(f"division by zero at flat index {idx}")
    out = Tensor(a.data / b.data)
    ad, bd = a.data, b.data

    def vjp(g):
        return (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * ad / (bd * bd), bd.shape))

    return _record(out, (a, b), vjp)


def where_mask(mask: np.ndarray, a: Tensor, b: Tensor) -> Tensor:
    """Select a where mask else b.  The mask is a constant boolean array."""
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _lift(b, a)
    _check_binary(a, b)
    out = Tensor(np.where(mask, a.data, b.data))

    def vjp(g):
        return (
            _unbroadcast(np.where(mask, g, 0.0), a.data.shape),
            _unbroadcast(np.where(mask, 0.0, g), b.data.shape),
        )

    return _record(out, (a, b), vjp)


# -- shape ops -----------------------------------------------------------


def reshape(x: Tensor, shape) -> Tensor:
    out = Tensor(x.data.reshape(shape))
    old = x.data.shape

    def vjp(g):
        return (g.reshape(old),)

    return _record(out, (x,), vjp)


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    out = Tensor(np.ascontiguousarray(x.data.transpose(axes)))
    inv = tuple(np.argsort(axes))

    def vjp(g):
        return (np.ascontiguousarray(g.transpose(inv)),)

    return _record(out, (x,), vjp)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ValueError("concat of an empty list")
    dt = tensors[0].data.dtype
    for t in tensors[1:]:
        if t.data.dtype != dt:
            raise ValueError("concat requires matching dtypes")
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(
            np.ascontiguousarray(np.take(g, np.arange(offsets[i], offsets[i + 1]), axis=axis))
            for i in range(len(sizes))
        )

    return _record(out, tuple(tensors), vjp)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along one axis."""
    if start < 0 or start + length > x.data.shape[axis]:
        raise ValueError(f"narrow out of range: axis {axis} start {start} length {length} of {x.data.shape}")
    sl = [slice(None)] * x.data.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)
    out = Tensor(np.ascontiguousarray(x.data[sl]))
    shape = x.data.shape

    def vjp(g):
        gx = np.zeros(shape, dtype=g.dtype)
        gx[sl] = g
        return (gx,)

    return _record(out, (x,), vjp)


def stack(tensors, axis: int = 0) -> Tensor:
    expanded = []
    for t in tensors:
        shape = list(t.data.shape)
        shape.insert(axis if axis >= 0 else axis + t.data.ndim + 1, 1)
        expanded.append(reshape(t, tuple(shape)))
    return concat(expanded, axis=axis)


# -- reductions ----------------------------------------------------------


def reduce_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(x.data.sum(axis=axis, keepdims=keepdims))
    shape = x.data.shape

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, shape).astype(g.dtype, copy=True),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).astype(g.dtype, copy=True),)

    return _record(out, (x,), vjp)


def reduce_mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = x.data.size
    elif isinstance(axis, tuple):
        count = int(np.prod([x.data.shape[a] for a in axis]))
    else:
        count = x.data.shape[axis]
    out = Tensor(x.data.mean(axis=axis, keepdims=keepdims))
    shape = x.data.shape

    def vjp(g):
        if axis is None:
            gg = g
        elif not keepdims:
            gg = np.expand_dims(g, axis)
        else:
            gg = g
        return ((np.broadcast_to(gg, shape) / count).astype(g.dtype, copy=False),)

    return _record(out, (x,), vjp)


def max_const(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Max as a constant (no gradient path).  For log-sum-exp shifts."""
    return Tensor(x.data.max(axis=axis, keepdims=keepdims))


# -- linear algebra ------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """a @ b where b is 2D; leading dims of a are flattened internally."""
    if not isinstance(b, Tensor):
        raise TypeError("matmul expects a Tensor right operand")
    _check_binary(a, b)
    if b.data.ndim != 2:
        raise ValueError(f"matmul right operand must be 2D, got {b.data.shape}")
    if a.data.ndim < 1 or a.data.shape[-1] != b.data.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    out = Tensor(a.data @ b.data)
    ad, bd = a.data, b.data

    def vjp(g):
        ga = g @ bd.T
        gflat = g.reshape(-1, g.shape[-1])
        aflat = ad.reshape(-1, ad.shape[-1])
        gb = aflat.T @ gflat
        return (ga, gb)

    return _record(out, (a, b), vjp)


# -- gather / scatter ----------------------------------------------------


def gather_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    """Pick rows from the second-to-last axis.

    x is [R, C] with idx [P], or [B, R, C] with idx [B, P].  The backward
    pass scatters with a single bincount over a combined flat index, which
    is deterministic regardless of duplicate indices.
    """
    idx = np.asarray(idx)
    if not np.issubdtype(idx.dtype, np.integer):
        raise ValueError("gather_rows index must be an integer array")
    if x.data.ndim == 2:
        r, c = x.data.shape
        if idx.ndim != 1:
            raise ValueError(f"index must be 1D for a 2D source, got {idx.shape}")
        if idx.min() < 0 or idx.max() >= r:
            raise IndexError(f"gather_rows index out of range [0, {r})")
        out = Tensor(x.data[idx])
        shape = x.data.shape

        def vjp(g):
            combined = idx[:, None].astype(np.int64) * c + np.arange(c, dtype=np.int64)
            flat = np.bincount(combined.ravel(), weights=g.ravel().astype(np.float64), minlength=r * c)
            return (flat.reshape(shape).astype(g.dtype, copy=False),)

        return _record(out, (x,), vjp)

    if x.data.ndim == 3:
        bsz, r, c = x.data.shape
        if idx.shape[0] != bsz or idx.ndim != 2:
            raise ValueError(f"index must be [B, P] for a [B, R, C] source, got {idx.shape}")
        if idx.min() < 0 or idx.max() >= r:
            raise IndexError(f"gather_rows index out of range [0, {r})")
        brow = np.arange(bsz, dtype=np.int64)[:, None]
        out = Tensor(x.data[brow, idx])
        shape = x.data.shape

        def vjp(g):
            base = (brow * r + idx.astype(np.int64))[:, :, None] * c + np.arange(c, dtype=np.int64)
            flat = np.bincount(base.ravel(), weights=g.ravel().astype(np.float64), minlength=bsz * r * c)
            return (flat.reshape(shape).astype(g.dtype, copy=False),)

        return _record(out, (x,), vjp)

    raise ValueError(f"gather_rows source must be 2D or 3D, got {x.data.shape}")


# -- convolution ---------------------------------------------------------


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Direct 2D cross-correlation, NCHW, square odd kernel, zero padding.

    Forward lowers to im2col plus one matmul; backward scatters the column
    gradient back with nine strided slice-adds.  No FFT anywhere, so the
    arithmetic is deterministic for a fixed thread count.
    """
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ValueError(f"conv2d expects x [B,C,H,W] and w [O,C,kh,kw], got {x.data.shape} and {w.data.shape}")
    _check_binary(x, w)
    bsz, cin, h, wdt = x.data.shape
    cout, cin_w, kh, kw = w.data.shape
    if cin != cin_w:
        raise ValueError(f"conv2d channel mismatch: input has {cin}, kernel expects {cin_w}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"conv2d kernel must be odd, got {kh}x{kw}")
    if stride < 1:
        raise ValueError("conv2d stride must be >= 1")
    hout = (h + 2 * padding - kh) // stride + 1
    wout = (wdt + 2 * padding - kw) // stride + 1
    if hout < 1 or wout < 1:
        raise ValueError(f"conv2d output would be empty: {hout}x{wout}")
    if b is not None:
        _check_binary(x, b)
        if b.data.shape != (cout,):
            raise ValueError(f"conv2d bias must be [{cout}], got {b.data.shape}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # [B, C, hout, wout, kh, kw]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(bsz, hout * wout, cin * kh * kw)
    wmat = w.data.reshape(cout, cin * kh * kw)
    out_flat = cols @ wmat.T
    if b is not None:
        out_flat = out_flat + b.data
    out = Tensor(np.ascontiguousarray(out_flat.reshape(bsz, hout, wout, cout).transpose(0, 3, 1, 2)))

    xshape = x.data.shape

    def vjp(g):
        gflat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(bsz, hout * wout, cout)
        gw = np.einsum("bpo,bpk->ok", gflat, cols).reshape(w.data.shape)
        gb = gflat.sum(axis=(0, 1)) if b is not None else None
        gcols = (gflat @ wmat).reshape(bsz, hout, wout, cin, kh, kw)
        hp, wp = h + 2 * padding, wdt + 2 * padding
        gxp = np.zeros((bsz, cin, hp, wp), dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i : i + stride * hout : stride, j : j + stride * wout : stride] += gcols[
                    :, :, :, :, i, j
                ].transpose(0, 3, 1, 2)
        gx = gxp[:, :, padding : padding + h, padding : padding + wdt] if padding else gxp
        if b is not None:
            return (np.ascontiguousarray(gx), gw, gb)
        return (np.ascontiguousarray(gx), gw)

    inputs = (x, w) if b is None else (x, w, b)
    return _record(out, inputs, vjp)


# -- stop gradient -------------------------------------------------------


def stop_grad(x: Tensor) -> Tensor:
    """Identity forward, exactly zero backward.  Never recorded."""
    return Tensor(x.data)


# -- gradient checking ---------------------------------------------------


def grad_check(fn, inputs, eps: float = 1e-5) -> float:
    """Compare tape gradients of a scalar function against central differences.

    `fn` is called with no arguments and must read the given float64 input
    tensors.  Returns the worst elementwise relative error
    |g_ad - g_fd| / max(1, |g_ad|, |g_fd|).  Owns the tape: resets it before
    and after, and leaves input grads cleared.
    """
    if isinstance(inputs, Tensor):
        inputs = [inputs]
    inputs = list(inputs)
    for t in inputs:
        if t.data.dtype != np.float64:
            raise ValueError("grad_check requires float64 inputs")
        if not t.requires_grad:
            raise ValueError("grad_check inputs must require grad")

    reset_tape()
    for t in inputs:
        t.grad = None
    y = fn()
    if y.data.size != 1:
        raise ValueError("grad_check function must return a scalar")
    if not np.isfinite(y.data.item()):
        raise FloatingPointError("grad_check function returned a non-finite value")
    backward(y)
    ad_grads = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    worst = 0.0
    with no_grad():
        for t, gad in zip(inputs, ad_grads):
            gad_flat = gad.ravel()
            for i in range(t.data.size):
                pos = np.unravel_index(i, t.data.shape)
                orig = t.data[pos]
                t.data[pos] = orig + eps
                y1 = fn().data.item()
                t.data[pos] = orig - eps
                y2 = fn().data.item()
                t.data[pos] = orig
                gfd = (y1 - y2) / (2.0 * eps)
                ga = gad_flat[i]
                err = abs(ga - gfd) / max(1.0, abs(ga), abs(gfd))
                if err > worst:
                    worst = err

    reset_tape()
    for t in inputs:
        t.grad = None
    return worst
