"""Dense real/complex tensors with tape-based reverse-mode differentiation.

Usage::

    with Tape() as tape:
        y = (x * x).sum()
    grads = backward(tape, y)

Only operations whose result depends on a trainable leaf are recorded, so the
tape is exactly the subgraph that gradients flow through.

Complex gradients follow the conjugate-cotangent convention: for a real loss
``L`` and a complex tensor ``z = x + iy`` the gradient stored for ``z`` is
``dL/dx + 1j * dL/dy``.  Stepping against it decreases ``L``, so complex
parameters train with the same update rule as real ones.  Under this
convention a holomorphic linear map ``y = A z`` pulls gradients back with the
adjoint ``A^H``, and a real input receiving a complex gradient keeps the real
part.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _kernels

__all__ = [
    "Tensor",
    "Tape",
    "GradientSet",
    "ShapeError",
    "NonFiniteError",
    "TapeReplayError",
    "record_forward",
    "backward",
    "tensor",
    "parameter",
    "add",
    "sub",
    "mul",
    "scale",
    "matmul",
    "dense",
    "contract",
    "transpose",
    "reshape",
    "concat",
    "take",
    "scatter",
    "relu",
    "gelu",
    "split_gelu",
    "make_complex",
    "real",
    "imag",
    "conj",
    "absolute",
    "reduce_sum",
    "reduce_mean",
    "sqrt",
    "fft2",
    "ifft2",
    "axis_transform",
    "axis_apply",
]


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class TapeReplayError(RuntimeError):
    pass


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data)
    if np.iscomplexobj(arr):
        return arr.astype(np.complex128, copy=False)
    return arr.astype(np.float64, copy=False)


class Tensor:
    """Immutable array value, optionally a trainable leaf.

    ``data`` may be *replaced* (the optimizer does this between steps) but is
    never modified in place by operations.
    """

    __slots__ = ("data", "requires_grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, check: bool = True):
        arr = _as_array(data)
        if check and not np.isfinite(arr).all():
            raise NonFiniteError(f"non-finite values in tensor {name or ''}".rstrip())
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def is_complex(self) -> bool:
        return self.data.dtype == np.complex128

    @property
    def dtype(self) -> str:
        return "complex128" if self.is_complex else "real64"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self):
        return self.data.item()

    def __repr__(self) -> str:
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, dtype={self.dtype})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __truediv__(self, other):
        if not np.isscalar(other):
            raise TypeError("only division by a scalar is supported")
        return scale(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return _slice(self, key)

    def sum(self, axis=None):
        return reduce_sum(self, axis)

    def mean(self, axis=None):
        return reduce_mean(self, axis)

    @property
    def T(self):
        return transpose(self)


def tensor(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=False, name=name)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, copy=True), requires_grad=True, name=name)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, check=False)


# ---------------------------------------------------------------------------
# tape


@dataclass
class _Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    forward: Callable[..., np.ndarray]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    """Ordered record of the primitive operations of one forward pass."""

    nodes: list[_Node] = field(default_factory=list)
    output: Tensor | None = None

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _stack().pop()
        assert popped is self

    def leaves(self) -> list[Tensor]:
        """Trainable leaves touched by the recorded pass, in first-use order."""
        produced = {id(n.output) for n in self.nodes}
        seen: dict[int, Tensor] = {}
        for node in self.nodes:
            for t in node.inputs:
                if t.requires_grad and id(t) not in produced and id(t) not in seen:
                    seen[id(t)] = t
        return list(seen.values())

    def replay(self) -> Tensor | None:
        """Re-evaluate every node from the current leaf values.

        Raises :class:`TapeReplayError` if any recomputed value differs from
        the recorded one (the recorded outputs are immutable, so a mismatch
        means corruption).
        """
        values: dict[int, np.ndarray] = {}
        for node in self.nodes:
            args = [values.get(id(t), t.data) for t in node.inputs]
            out = node.forward(*args)
            if out.shape != node.output.shape or not np.array_equal(out, node.output.data):
                raise TapeReplayError(f"replay of {node.op} diverged from the recorded value")
            values[id(node.output)] = out
        return self.output


_local = threading.local()


def _stack() -> list[Tape]:
    st = getattr(_local, "stack", None)
    if st is None:
        st = _local.stack = []
    return st


def _record(op, inputs, out_data, forward, backward_fn) -> Tensor:
    req = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=req, check=False)
    stack = _stack()
    if req and stack:
        stack[-1].nodes.append(_Node(op, tuple(inputs), out, forward, backward_fn))
    return out


GradientSet = dict  # Tensor -> np.ndarray, one entry per trainable leaf


def record_forward(fn: Callable[..., Tensor], *params: Tensor) -> tuple[Tensor, Tape]:
    """Evaluate ``fn(*params)`` while recording a fresh tape."""
    for p in params:
        if not np.isfinite(p.data).all():
            raise NonFiniteError(f"non-finite operand {p!r}")
    with Tape() as tape:
        value = fn(*params)
    tape.output = value
    return value, tape


def backward(tape: Tape, output: Tensor | None = None, seed=None, *, verify: bool = False) -> GradientSet:
    """Propagate ``seed`` from ``output`` back to every trainable leaf.

    Returns a mapping ``leaf tensor -> gradient array``.  ``seed`` defaults to
    1 and may only be omitted for a scalar output.
    """
    output = output if output is not None else tape.output
    if output is None:
        raise ValueError("no output given and the tape has none recorded")
    if seed is None:
        if output.data.size != 1:
            raise ValueError(f"non-scalar output of shape {output.shape} needs an explicit seed")
        seed = np.ones_like(output.data)
    seed = np.asarray(seed)
    if seed.shape != output.shape:
        raise ShapeError(f"seed shape {seed.shape} does not match output {output.shape}")
    if verify:
        tape.replay()

    grads: dict[int, np.ndarray] = {id(output): seed.astype(output.data.dtype)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        in_grads = node.backward(g)
        for t, gi in zip(node.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            if not t.is_complex and np.iscomplexobj(gi):
                gi = gi.real
            if gi.shape != t.shape:
                gi = _unbroadcast(gi, t.shape)
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
            leaves.setdefault(key, t)

    produced = {id(n.output) for n in tape.nodes}
    result: GradientSet = {}
    for key, t in leaves.items():
        if key in produced:
            continue
        result[t] = grads.get(key, np.zeros_like(t.data))
    if output.requires_grad and id(output) not in produced and id(output) in grads:
        result[output] = grads[id(output)]
    return result


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_check(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _broadcast_check("add", a, b)
    return _record("add", (a, b), a.data + b.data, np.add, lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _broadcast_check("sub", a, b)
    return _record("sub", (a, b), a.data - b.data, np.subtract, lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _broadcast_check("mul", a, b)
    ad, bd = a.data, b.data
    return _record(
        "mul",
        (a, b),
        ad * bd,
        np.multiply,
        lambda g: (g * np.conj(bd), g * np.conj(ad)),
    )


def scale(a: Tensor, c) -> Tensor:
    """Multiply by a (real or complex) Python scalar."""
    a = _wrap(a)
    cc = np.conj(c)
    return _record("scale", (a,), a.data * c, lambda x: x * c, lambda g: (g * cc,))


# ---------------------------------------------------------------------------
# contractions and layout


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def bwd(g):
        ga = g @ np.conj(np.swapaxes(bd, -1, -2))
        gb = np.conj(np.swapaxes(ad, -1, -2)) @ g
        return ga, gb

    return _record("matmul", (a, b), ad @ bd, np.matmul, bwd)


def dense(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Contract the last axis of ``x`` with an ``(in, out)`` matrix, plus bias."""
    x, weight = _wrap(x), _wrap(weight)
    if weight.data.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"dense: incompatible shapes {x.shape} and {weight.shape}")
    inputs = (x, weight)
    if bias is not None:
        bias = _wrap(bias)
        if bias.shape != (weight.shape[1],):
            raise ShapeError(f"dense: bias shape {bias.shape} does not match {weight.shape[1]} outputs")
        inputs = (x, weight, bias)
    lead = x.shape[:-1]
    xd, wd = x.data, weight.data

    def fwd(v, m, c=None):
        out = v.reshape(-1, m.shape[0]) @ m
        if c is not None:
            out += c
        return out.reshape(lead + (m.shape[1],))

    def bwd(g):
        g2 = g.reshape(-1, wd.shape[1])
        gx = (g2 @ np.conj(wd.T)).reshape(lead + (wd.shape[0],))
        gw = np.conj(xd.reshape(-1, wd.shape[0]).T) @ g2
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return _record("dense", inputs, fwd(*(t.data for t in inputs)), fwd, bwd)


def contract(spec: str, a: Tensor, b: Tensor) -> Tensor:
    """Two-operand einsum with explicit output subscripts."""
    a, b = _wrap(a), _wrap(b)
    ins, out = spec.replace(" ", "").split("->")
    sa, sb = ins.split(",")
    for s, t in ((sa, a), (sb, b)):
        if len(s) != t.data.ndim or len(set(s)) != len(s):
            raise ShapeError(f"contract {spec!r}: operand subscripts {s!r} do not fit shape {t.shape}")
    for s, other in ((sa, sb), (sb, sa)):
        if not set(s) <= set(out) | set(other):
            raise ShapeError(f"contract {spec!r}: summing an index private to one operand is unsupported")
    sizes: dict[str, int] = {}
    for s, t in ((sa, a), (sb, b)):
        for ch, n in zip(s, t.shape):
            if sizes.setdefault(ch, n) != n:
                raise ShapeError(f"contract {spec!r}: index {ch!r} has extents {sizes[ch]} and {n} ({a.shape} vs {b.shape})")
    ad, bd = a.data, b.data
    fwd = lambda x, y: np.einsum(spec, x, y, optimize=True)

    def bwd(g):
        ga = np.einsum(f"{out},{sb}->{sa}", g, np.conj(bd), optimize=True)
        gb = np.einsum(f"{out},{sa}->{sb}", g, np.conj(ad), optimize=True)
        return ga, gb

    return _record("contract", (a, b), fwd(ad, bd), fwd, bwd)


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    a = _wrap(a)
    axes = tuple(reversed(range(a.data.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return _record(
        "transpose",
        (a,),
        np.transpose(a.data, axes),
        lambda x: np.transpose(x, axes),
        lambda g: (np.transpose(g, inv),),
    )


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    a = _wrap(a)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {old} as {tuple(shape)}") from None
    return _record("reshape", (a,), out, lambda x: x.reshape(shape), lambda g: (g.reshape(old),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = tuple(_wrap(t) for t in tensors)
    nd = ts[0].data.ndim
    ax = axis % nd
    for t in ts[1:]:
        if t.data.ndim != nd or any(t.shape[i] != ts[0].shape[i] for i in range(nd) if i != ax):
            raise ShapeError(f"concat: incompatible shapes {ts[0].shape} and {t.shape} along axis {axis}")
    bounds = np.cumsum([0] + [t.shape[ax] for t in ts])
    any_complex = any(t.is_complex for t in ts)

    def fwd(*xs):
        if any_complex:
            xs = [x.astype(np.complex128, copy=False) for x in xs]
        return np.concatenate(xs, axis=ax)

    def bwd(g):
        idx = [slice(None)] * nd
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx[ax] = slice(lo, hi)
            out.append(g[tuple(idx)])
        return out

    return _record("concat", ts, fwd(*(t.data for t in ts)), fwd, bwd)


def _slice(a: Tensor, key) -> Tensor:
    shape = a.shape

    def bwd(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[key] = g
        return (full,)

    return _record("slice", (a,), a.data[key], lambda x: x[key], bwd)


def take(a: Tensor, indices, axis: int) -> Tensor:
    """Gather ``indices`` along ``axis`` (repeats allowed)."""
    a = _wrap(a)
    idx = np.asarray(indices, dtype=np.intp)
    n = a.shape[axis]
    distinct = np.unique(idx).size == idx.size

    def bwd(g):
        if distinct:
            return (_scatter_into(g, idx, axis, n),)
        shape = list(g.shape)
        shape[axis] = n
        out = np.zeros(shape, dtype=g.dtype)
        np.add.at(np.moveaxis(out, axis, 0), idx, np.moveaxis(g, axis, 0))
        return (out,)

    return _record("take", (a,), np.take(a.data, idx, axis=axis), lambda x: np.take(x, idx, axis=axis), bwd)


def _scatter_into(x: np.ndarray, idx: np.ndarray, axis: int, size: int) -> np.ndarray:
    shape = list(x.shape)
    shape[axis] = size
    out = np.zeros(shape, dtype=x.dtype)
    sl = [slice(None)] * x.ndim
    sl[axis] = idx
    out[tuple(sl)] = x
    return out


def scatter(a: Tensor, indices, axis: int, size: int) -> Tensor:
    """Place ``a`` at distinct ``indices`` of a zero tensor of extent ``size``."""
    a = _wrap(a)
    idx = np.asarray(indices, dtype=np.intp)
    if len(idx) != a.shape[axis]:
        raise ShapeError(f"scatter: {len(idx)} indices for axis of extent {a.shape[axis]}")
    if np.unique(idx).size != idx.size:
        raise ValueError("scatter: indices must be distinct")
    return _record(
        "scatter",
        (a,),
        _scatter_into(a.data, idx, axis, size),
        lambda x: _scatter_into(x, idx, axis, size),
        lambda g: (np.take(g, idx, axis=axis),),
    )


# ---------------------------------------------------------------------------
# nonlinearities (real tensors)


def _require_real(op: str, a: Tensor) -> None:
    if a.is_complex:
        raise TypeError(f"{op} is defined on real tensors; split complex inputs first")


def relu(a: Tensor) -> Tensor:
    a = _wrap(a)
    _require_real("relu", a)
    x = a.data
    return _record("relu", (a,), np.maximum(x, 0.0), lambda v: np.maximum(v, 0.0), lambda g: (g * (x > 0),))


def _gelu(x):
    return _kernels.gelu_with_grad(x)[0]


def gelu(a: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    a = _wrap(a)
    _require_real("gelu", a)
    x = a.data
    y, dy = _kernels.gelu_with_grad(x)
    return _record("gelu", (a,), y, _gelu, lambda g: (g * dy,))


def sqrt(a: Tensor) -> Tensor:
    a = _wrap(a)
    _require_real("sqrt", a)
    y = np.sqrt(a.data)
    return _record("sqrt", (a,), y, np.sqrt, lambda g: (g / (2.0 * y),))


def split_gelu(a: Tensor) -> Tensor:
    """GELU applied separately to the real and imaginary parts."""
    a = _wrap(a)
    if not a.is_complex:
        return gelu(a)
    out, d = _kernels.split_gelu_with_grad(a.data)

    def bwd(g):
        if not np.iscomplexobj(g):
            return (g * d.real,)
        return (_kernels.split_scale(g, d),)

    return _record("split_gelu", (a,), out, lambda v: _kernels.split_gelu_with_grad(v)[0], bwd)


# ---------------------------------------------------------------------------
# complex plumbing


def make_complex(re: Tensor, im: Tensor) -> Tensor:
    re, im = _wrap(re), _wrap(im)
    _require_real("complex-construct", re)
    _require_real("complex-construct", im)
    _broadcast_check("complex-construct", re, im)
    fwd = lambda r, i: r + 1j * i
    return _record("complex", (re, im), fwd(re.data, im.data), fwd, lambda g: (g.real, g.imag))


def real(a: Tensor) -> Tensor:
    a = _wrap(a)
    return _record("real", (a,), np.real(a.data).copy(), lambda x: np.real(x).copy(), lambda g: (g.astype(np.complex128),))


def imag(a: Tensor) -> Tensor:
    a = _wrap(a)
    return _record("imag", (a,), np.imag(a.data).copy(), lambda x: np.imag(x).copy(), lambda g: (1j * g,))


def conj(a: Tensor) -> Tensor:
    a = _wrap(a)
    return _record("conj", (a,), np.conj(a.data), np.conj, lambda g: (np.conj(g),))


def absolute(a: Tensor) -> Tensor:
    a = _wrap(a)
    x = a.data
    y = np.abs(x)

    def bwd(g):
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(y > 0, x / np.where(y > 0, y, 1.0), 0.0)
        return (g * unit,)

    return _record("abs", (a,), y, np.abs, bwd)


# ---------------------------------------------------------------------------
# reductions


def reduce_sum(a: Tensor, axis=None) -> Tensor:
    a = _wrap(a)
    shape = a.shape

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    fwd = lambda x: np.sum(x, axis=axis)
    return _record("sum", (a,), np.asarray(fwd(a.data)), lambda x: np.asarray(fwd(x)), bwd)


def reduce_mean(a: Tensor, axis=None) -> Tensor:
    a = _wrap(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(reduce_sum(a, axis), 1.0 / n)


# ---------------------------------------------------------------------------
# spectral transforms over the last two axes


def fft2(a: Tensor, axes=(-2, -1)) -> Tensor:
    """Unnormalized 2D DFT over ``axes``."""
    a = _wrap(a)
    n = a.shape[axes[0]] * a.shape[axes[1]]
    fwd = lambda x: np.fft.fft2(x, axes=axes)
    return _record("fft2", (a,), fwd(a.data), fwd, lambda g: (np.fft.ifft2(g, axes=axes) * n,))


def ifft2(a: Tensor, axes=(-2, -1)) -> Tensor:
    """Inverse of :func:`fft2` (carries the 1/(H*W) factor)."""
    a = _wrap(a)
    n = a.shape[axes[0]] * a.shape[axes[1]]
    fwd = lambda x: np.fft.ifft2(x, axes=axes)
    return _record("ifft2", (a,), fwd(a.data), fwd, lambda g: (np.fft.fft2(g, axes=axes) / n,))


def axis_transform(
    x: Tensor,
    matrix_fn: Callable[[float], np.ndarray],
    dmatrix_fn: Callable[[float], np.ndarray],
    order: Tensor,
    axis: int,
) -> Tensor:
    """Apply an order-dependent matrix ``M(order)`` along ``axis``.

    ``matrix_fn(a)`` returns ``M(a)`` (shape out x in) and ``dmatrix_fn(a)``
    its derivative in ``a``; ``order`` is a real scalar tensor and receives a
    gradient.  Used for the fractional Fourier transform with learnable order.
    """
    x, order = _wrap(x), _wrap(order)
    if order.data.size != 1 or order.is_complex:
        raise ShapeError(f"axis_transform: order must be a real scalar, got shape {order.shape}")
    ax = axis % x.data.ndim

    def apply(m, v):
        return _apply_along(m, v, ax)

    def fwd(v, a):
        return apply(matrix_fn(float(a)), v)

    a0 = float(order.data)
    m = matrix_fn(a0)
    if m.shape[1] != x.shape[ax]:
        raise ShapeError(f"axis_transform: matrix {m.shape} does not fit axis {ax} of {x.shape}")
    xd = x.data

    def bwd(g):
        gx = apply(np.conj(m).T, g)
        ga = np.real(np.vdot(g, apply(dmatrix_fn(a0), xd)))
        return gx, np.asarray(ga).reshape(order.shape)

    return _record("axis_transform", (x, order), apply(m, xd), fwd, bwd)


def _apply_along(m: np.ndarray, v: np.ndarray, ax: int) -> np.ndarray:
    pre = int(np.prod(v.shape[:ax]))
    post = int(np.prod(v.shape[ax + 1 :]))
    out = np.matmul(m, v.reshape(pre, v.shape[ax], post))
    return out.reshape(v.shape[:ax] + (m.shape[0],) + v.shape[ax + 1 :])


def axis_apply(x: Tensor, matrix: np.ndarray, axis: int) -> Tensor:
    """Apply a constant ``(out, in)`` matrix along ``axis``."""
    x = _wrap(x)
    ax = axis % x.data.ndim
    m = np.asarray(matrix)
    if m.ndim != 2 or m.shape[1] != x.shape[ax]:
        raise ShapeError(f"axis_apply: matrix {m.shape} does not fit axis {ax} of {x.shape}")
    mh = np.conj(m).T
    return _record(
        "axis_apply",
        (x,),
        _apply_along(m, x.data, ax),
        lambda v: _apply_along(m, v, ax),
        lambda g: (_apply_along(mh, g, ax),),
    )
