"""Minimal reverse-mode autodiff over dense numpy arrays.

A `Tensor` wraps a numpy array and records the operations applied to it.
Calling `backward()` on a scalar tensor runs a reverse topological sweep and
accumulates `.grad` on every reachable tensor with `requires_grad=True`.

Design constraints:
  * arrays are immutable after creation (ops return new tensors),
  * the primitive set is intentionally small; everything else is composed,
  * float32 by default, float64 available for exactness/gradient checks.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


# Capture/playback of binarizer outputs, used by finite-difference checks of
# the straight-through estimator: in playback mode `sign_ste` returns
# x + (recorded_sign - recorded_x), whose true derivative at the recorded
# point equals the straight-through gradient.
_quant_record: list[tuple[np.ndarray, np.ndarray]] | None = None
_quant_playback: list[tuple[np.ndarray, np.ndarray]] | None = None


@contextlib.contextmanager
def quant_capture():
    global _quant_record
    _quant_record = []
    try:
        yield _quant_record
    finally:
        _quant_record = None


@contextlib.contextmanager
def quant_playback(records: list[tuple[np.ndarray, np.ndarray]]):
    global _quant_playback
    _quant_playback = list(records)
    try:
        yield
    finally:
        _quant_playback = None


class ShapeError(ValueError):
    pass


class NumericError(FloatingPointError):
    pass


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_pending", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str = ""):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def astype(self, dtype) -> "Tensor":
        out = Tensor(self.data.astype(dtype), requires_grad=self.requires_grad, name=self.name)
        return out

    def zero_grad(self):
        self.grad = None

    # -- graph plumbing -----------------------------------------------------

    @staticmethod
    def _lift(x, dtype) -> "Tensor":
        if isinstance(x, Tensor):
            return x
        return Tensor(np.asarray(x, dtype=dtype))

    def backward(self, grad: np.ndarray | None = None):
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        # iterative topological order (graphs can be deep in recurrent runs)
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad and node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
            if node._backward is not None:
                node._backward(g)
                for p, pg in node._pending:  # type: ignore[attr-defined]
                    key = id(p)
                    if key in grads:
                        grads[key] = grads[key] + pg
                    else:
                        grads[key] = pg
                node._pending = []  # type: ignore[attr-defined]

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        other = Tensor._lift(other, self.dtype)
        a, b = self, other

        def bw(g, out):
            out._pending.append((a, _unbroadcast(g, a.shape)))
            out._pending.append((b, _unbroadcast(g, b.shape)))

        return _node(a.data + b.data, (a, b), bw)

    __radd__ = __add__

    def __neg__(self):
        a = self

        def bw(g, out):
            out._pending.append((a, -g))

        return _node(-a.data, (a,), bw)

    def __sub__(self, other):
        return self + (-Tensor._lift(other, self.dtype))

    def __rsub__(self, other):
        return Tensor._lift(other, self.dtype) + (-self)

    def __mul__(self, other):
        other = Tensor._lift(other, self.dtype)
        a, b = self, other

        def bw(g, out):
            out._pending.append((a, _unbroadcast(g * b.data, a.shape)))
            out._pending.append((b, _unbroadcast(g * a.data, b.shape)))

        return _node(a.data * b.data, (a, b), bw)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = Tensor._lift(other, self.dtype)
        a, b = self, other

        def bw(g, out):
            out._pending.append((a, _unbroadcast(g / b.data, a.shape)))
            out._pending.append((b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape)))

        return _node(a.data / b.data, (a, b), bw)

    def __rtruediv__(self, other):
        return Tensor._lift(other, self.dtype) / self

    def pow(self, p: float):
        a = self

        def bw(g, out):
            out._pending.append((a, g * p * np.power(a.data, p - 1)))

        return _node(np.power(a.data, p), (a,), bw)

    __pow__ = pow

    def exp(self):
        a = self
        val = np.exp(a.data)

        def bw(g, out):
            out._pending.append((a, g * val))

        return _node(val, (a,), bw)

    def log(self):
        a = self

        def bw(g, out):
            out._pending.append((a, g / a.data))

        return _node(np.log(a.data), (a,), bw)

    def tanh(self):
        a = self
        val = np.tanh(a.data)

        def bw(g, out):
            out._pending.append((a, g * (1.0 - val * val)))

        return _node(val, (a,), bw)

    def sigmoid(self):
        a = self
        val = _sigmoid(a.data)

        def bw(g, out):
            out._pending.append((a, g * val * (1.0 - val)))

        return _node(val, (a,), bw)

    def softplus(self):
        a = self
        val = np.logaddexp(np.zeros((), dtype=a.dtype), a.data)

        def bw(g, out):
            out._pending.append((a, g * _sigmoid(a.data)))

        return _node(val, (a,), bw)

    def sqrt(self):
        return self.pow(0.5)

    # -- linear algebra -----------------------------------------------------

    def matmul(self, other: "Tensor") -> "Tensor":
        other = Tensor._lift(other, self.dtype)
        a, b = self, other
        if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
            raise ShapeError(f"matmul inner extents differ: {a.shape} vs {b.shape}")
        val = np.matmul(a.data, b.data)

        def bw(g, out):
            ad = a.data if a.ndim > 1 else a.data[None, :]
            bd = b.data if b.ndim > 1 else b.data[:, None]
            gg = g
            if a.ndim == 1:
                gg = np.expand_dims(gg, -2)
            if b.ndim == 1:
                gg = np.expand_dims(gg, -1)
            ga = gg @ np.swapaxes(bd, -1, -2)
            gb = np.swapaxes(ad, -1, -2) @ gg
            if a.ndim == 1:
                ga = ga.reshape(ga.shape[:-2] + (ga.shape[-1],))
            if b.ndim == 1:
                gb = gb.reshape(gb.shape[:-1])
            out._pending.append((a, _unbroadcast(ga, a.shape)))
            out._pending.append((b, _unbroadcast(gb, b.shape)))

        return _node(val, (a, b), bw)

    __matmul__ = matmul

    # -- reductions / shaping -----------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        a = self
        val = a.data.sum(axis=axis, keepdims=keepdims)

        def bw(g, out):
            gg = g
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            out._pending.append((a, np.broadcast_to(gg, a.shape).copy()))

        return _node(val, (a,), bw)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        n = self.size if axis is None else _axis_size(self.shape, axis)
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self

        def bw(g, out):
            out._pending.append((a, g.reshape(a.shape)))

        return _node(a.data.reshape(shape), (a,), bw)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        a = self
        inv = np.argsort(axes)

        def bw(g, out):
            out._pending.append((a, g.transpose(inv)))

        return _node(a.data.transpose(axes), (a,), bw)

    def __getitem__(self, key) -> "Tensor":
        a = self
        val = a.data[key]

        def bw(g, out):
            full = np.zeros(a.shape, dtype=g.dtype)
            np.add.at(full, key, g)
            out._pending.append((a, full))

        return _node(np.ascontiguousarray(val), (a,), bw)

    # -- special ops --------------------------------------------------------

    def sign_ste(self) -> "Tensor":
        """Binarize to {-1,+1} (0 maps to +1); gradient passes straight through."""
        a = self
        if _quant_playback is not None:
            x0, s0 = _quant_playback.pop(0)
            offset = s0 - x0
            return a + Tensor(offset.astype(a.dtype))
        val = np.where(a.data >= 0, 1.0, -1.0).astype(a.dtype)
        if _quant_record is not None:
            _quant_record.append((a.data.copy(), val.copy()))

        def bw(g, out):
            out._pending.append((a, g))

        return _node(val, (a,), bw)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _axis_size(shape, axis) -> int:
    if isinstance(axis, int):
        return shape[axis]
    n = 1
    for ax in axis:
        n *= shape[ax]
    return n


def _node(data: np.ndarray, parents: tuple[Tensor, ...],
          bw: Callable[[np.ndarray, Tensor], None]) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad or p._backward is not None for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._pending = []  # type: ignore[attr-defined]
        out._backward = lambda g, _bw=bw, _out=out: _bw(g, _out)
    return out


def tensor(data, requires_grad: bool = False, dtype=None, name: str = "") -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype, name=name)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = list(tensors)
    val = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def bw(g, out):
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            out._pending.append((t, g[tuple(idx)]))

    return _node(val, tuple(ts), bw)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    expanded = []
    for t in tensors:
        shape = list(t.shape)
        shape.insert(axis if axis >= 0 else t.ndim + 1 + axis, 1)
        expanded.append(t.reshape(shape))
    return concat(expanded, axis=axis)


def apply_axis_matrix(x: Tensor, m: np.ndarray, axis: int) -> Tensor:
    """Contract a constant matrix against one axis: y = m @ x along `axis`.

    `m` has shape (out_extent, in_extent) and carries no gradient; used for
    parameter-free resampling (area downsample, bilinear upsample).
    """
    a = x
    moved = np.moveaxis(a.data, axis, 0)
    val = np.moveaxis(np.tensordot(m, moved, axes=1), 0, axis)

    def bw(g, out):
        gm = np.moveaxis(g, axis, 0)
        out._pending.append((a, np.moveaxis(np.tensordot(m.T.astype(g.dtype), gm, axes=1), 0, axis)))

    return _node(val, (a,), bw)


def softmax_lastdim(x: Tensor) -> Tensor:
    """Numerically stabilized softmax over the last axis.

    -inf entries (additive masks) yield exactly zero weight. Any NaN in the
    input is a contract violation.
    """
    if np.isnan(x.data).any():
        raise NumericError("softmax input contains NaN")
    m = np.max(x.data, axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = (x - Tensor(m.astype(x.dtype))).exp()
    denom = e.sum(axis=-1, keepdims=True)
    # fully masked rows (all -inf) get zero weight everywhere instead of 0/0
    dead = (denom.data == 0).astype(x.dtype)
    if dead.any():
        denom = denom + Tensor(dead)
    return e / denom


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    return xc / (var + eps).sqrt() * gain + bias


def gelu(x: Tensor) -> Tensor:
    # tanh approximation
    c = 0.7978845608028654  # sqrt(2/pi)
    return 0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())


def mse(a: Tensor, b: Tensor) -> Tensor:
    d = a - b
    return (d * d).mean()


def as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x), dtype=dtype)
