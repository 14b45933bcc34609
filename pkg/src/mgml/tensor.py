"""Rank-4 float64 tensors with reverse-mode gradients.

Every value flowing through the network is a :class:`Tensor` of shape
``(n, c, h, w)``. Feature vectors are stored with ``h == w == 1`` and scalars
(losses) as ``(1, 1, 1, 1)``.

An op builds its output tensor together with a closure that maps the
output's gradient to its parents' gradients. :meth:`Tensor.backward` walks the
recorded trace once, in a fixed topological order, and then releases it.
"""
from __future__ import annotations

from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import BoundsError, ShapeError, UsageError


class Shape(NamedTuple):
    n: int
    c: int
    h: int
    w: int

    def __str__(self) -> str:
        return f"{self.n}x{self.c}x{self.h}x{self.w}"

    @property
    def size(self) -> int:
        return self.n * self.c * self.h * self.w


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_consumed")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _parents: Sequence["Tensor"] = (),
        _backward: Callable[[np.ndarray], None] | None = None,
    ):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim != 4:
            raise ShapeError(f"tensor must be rank 4 (n, c, h, w), got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise ShapeError(f"all tensor dimensions must be >= 1, got {arr.shape}")
        self.data = np.ascontiguousarray(arr)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = tuple(_parents)
        self._backward = _backward
        self._consumed = False

    @classmethod
    def from_flat(cls, values, shape, requires_grad: bool = False) -> "Tensor":
        shape = Shape(*shape)
        values = np.asarray(values, dtype=np.float64).ravel()
        if values.size != shape.size:
            raise ShapeError(f"{values.size} values do not fill shape {shape}")
        return cls(values.reshape(shape), requires_grad=requires_grad)

    @classmethod
    def zeros(cls, shape, requires_grad: bool = False) -> "Tensor":
        return cls(np.zeros(tuple(shape)), requires_grad=requires_grad)

    @property
    def shape(self) -> Shape:
        return Shape(*self.data.shape)

    def flat(self) -> np.ndarray:
        return self.data.ravel()

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad" if self.requires_grad else ""
        return f"Tensor({self.shape}{flag})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def _accumulate(self, g: np.ndarray) -> None:
        # never mutate an existing grad buffer in place: it may be shared
        self.grad = g if self.grad is None else self.grad + g

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Propagate gradients from this tensor to every leaf that requires them.

        The trace is single-use: a second call raises :class:`UsageError`.
        """
        if self._consumed:
            raise UsageError("backward() already ran on this trace; run a new forward pass")
        if not self.requires_grad:
            raise UsageError("backward() called on a tensor that does not require grad")
        if grad is None:
            grad = np.ones_like(self.data)
        elif np.shape(grad) != self.data.shape:
            raise ShapeError(f"seed gradient shape {np.shape(grad)} != {self.shape}")

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in reversed(node._parents):
                if id(p) not in seen:
                    stack.append((p, False))

        self._accumulate(np.asarray(grad, dtype=np.float64))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        for node in order:
            if node._parents:
                node._backward = None
                node._parents = ()
                node._consumed = True
                if node is not self:
                    node.grad = None
        self._consumed = True


def _result(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    """Wrap an op result, recording the trace only if some parent needs grads."""
    live = [p for p in parents if p.requires_grad]
    if not live:
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=parents, _backward=backward)


def check_anchor(shape: Shape, anchor) -> None:
    x1, y1, x2, y2 = (int(v) for v in anchor)
    _, _, h, w = shape
    if not 0 <= x1 < w:
        raise BoundsError(f"anchor x1={x1} outside [0, {w}) for tensor {shape}")
    if not 0 <= y1 < h:
        raise BoundsError(f"anchor y1={y1} outside [0, {h}) for tensor {shape}")
    if not x1 < x2 <= w:
        raise BoundsError(f"anchor x2={x2} outside ({x1}, {w}] for tensor {shape}")
    if not y1 < y2 <= h:
        raise BoundsError(f"anchor y2={y2} outside ({y1}, {h}] for tensor {shape}")


def crop_spatial(t: Tensor, anchor) -> Tensor:
    """Crop the half-open window ``[x1, x2) x [y1, y2)`` from every channel."""
    check_anchor(t.shape, anchor)
    x1, y1, x2, y2 = (int(v) for v in anchor)
    out = t.data[:, :, y1:y2, x1:x2].copy()

    def backward(g):
        full = np.zeros_like(t.data)
        full[:, :, y1:y2, x1:x2] = g
        t._accumulate(full)

    return _result(out, (t,), backward)


def slice_channels(t: Tensor, lo: int, hi: int) -> Tensor:
    c = t.shape.c
    if not 0 <= lo < hi <= c:
        raise BoundsError(f"channel range [{lo}, {hi}) invalid for {c} channels")
    out = t.data[:, lo:hi].copy()

    def backward(g):
        full = np.zeros_like(t.data)
        full[:, lo:hi] = g
        t._accumulate(full)

    return _result(out, (t,), backward)


def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ShapeError("concat_channels needs at least one tensor")
    ref = parts[0].shape
    for p in parts[1:]:
        s = p.shape
        if (s.n, s.h, s.w) != (ref.n, ref.h, ref.w):
            raise ShapeError(f"cannot concatenate {ref} with {s}: batch/spatial dims differ")
    if len(parts) == 1:
        return parts[0]
    out = np.concatenate([p.data for p in parts], axis=1)
    bounds = np.cumsum([0] + [p.shape.c for p in parts])

    def backward(g):
        for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
            if p.requires_grad:
                p._accumulate(g[:, lo:hi])

    return _result(out, parts, backward)


def _pool_matrix(size: int, out: int) -> np.ndarray:
    """Row i averages input positions ``[floor(i*size/out), ceil((i+1)*size/out))``."""
    m = np.zeros((out, size))
    for i in range(out):
        lo = (i * size) // out
        hi = -((-(i + 1) * size) // out)
        m[i, lo:hi] = 1.0 / (hi - lo)
    return m


def adaptive_avg_pool(t: Tensor, out_h: int, out_w: int) -> Tensor:
    _, _, h, w = t.shape
    if not (1 <= out_h <= h and 1 <= out_w <= w):
        raise ShapeError(f"adaptive pool output {out_h}x{out_w} invalid for input {t.shape}")
    if (out_h, out_w) == (h, w):
        return t
    ph = _pool_matrix(h, out_h)
    pw = _pool_matrix(w, out_w)
    out = ph @ t.data @ pw.T

    def backward(g):
        t._accumulate(ph.T @ g @ pw)

    return _result(out, (t,), backward)


def global_avg_pool(t: Tensor) -> Tensor:
    _, _, h, w = t.shape
    out = t.data.mean(axis=(2, 3), keepdims=True)

    def backward(g):
        t._accumulate(np.broadcast_to(g / (h * w), t.data.shape).copy())

    return _result(out, (t,), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"cannot add tensors of shape {a.shape} and {b.shape}")
    out = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(g)

    return _result(out, (a, b), backward)


def scale(t: Tensor, factor: float) -> Tensor:
    factor = float(factor)

    def backward(g):
        t._accumulate(g * factor)

    return _result(t.data * factor, (t,), backward)


def sum_all(t: Tensor) -> Tensor:
    """Sum of every element, as a ``(1, 1, 1, 1)`` scalar tensor."""
    out = np.full((1, 1, 1, 1), t.data.sum())

    def backward(g):
        t._accumulate(np.full_like(t.data, g.item()))

    return _result(out, (t,), backward)


def relu(t: Tensor) -> Tensor:
    mask = t.data > 0

    def backward(g):
        t._accumulate(g * mask)

    return _result(t.data * mask, (t,), backward)


def max_pool2(t: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; odd trailing rows/columns are dropped.

    Ties go to the first maximum in row-major window order.
    """
    n, c, h, w = t.shape
    oh, ow = h // 2, w // 2
    if oh < 1 or ow < 1:
        raise ShapeError(f"max pool needs at least 2x2 input, got {t.shape}")
    win = t.data[:, :, : 2 * oh, : 2 * ow].reshape(n, c, oh, 2, ow, 2)
    win = win.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, oh, ow, 4)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        gw = np.zeros((n, c, oh, ow, 4))
        np.put_along_axis(gw, idx[..., None], g[..., None], axis=-1)
        gw = gw.reshape(n, c, oh, ow, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * oh, 2 * ow)
        full = np.zeros_like(t.data)
        full[:, :, : 2 * oh, : 2 * ow] = gw
        t._accumulate(full)

    return _result(out, (t,), backward)


def weighted_sum(t: Tensor, weights: np.ndarray) -> Tensor:
    """``sum(t * weights)`` for a constant array of the same shape; a scalar probe for gradient checks."""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != t.data.shape:
        raise ShapeError(f"weights {weights.shape} do not match tensor {t.shape}")
    out = np.full((1, 1, 1, 1), float((t.data * weights).sum()))

    def backward(g):
        t._accumulate(g.item() * weights)

    return _result(out, (t,), backward)
