"""Dense tensors with a reverse-mode tape.

Every op returns a new immutable :class:`Tensor`. Ops that touch at least one
tensor with ``requires_grad`` record their parents and a backward closure; the
global creation counter gives a topological order for free, so
:func:`backward` just walks the reachable nodes in decreasing id order.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_ids = itertools.count()

DEFAULT_DTYPE = np.float64


class NumericError(FloatingPointError):
    """A non-finite value appeared at an op boundary."""


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


def set_default_dtype(dtype) -> None:
    global DEFAULT_DTYPE
    DEFAULT_DTYPE = np.dtype(dtype).type


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericError(f"{op}: non-finite value in output")


class Tensor:
    __slots__ = ("data", "requires_grad", "parents", "backward_fn", "id", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.array(data, dtype=dtype or DEFAULT_DTYPE)
        _check_finite(arr, "tensor")
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = requires_grad
        self.parents: tuple[Tensor, ...] = ()
        self.backward_fn = None
        self.id = next(_ids)
        self.op = "leaf"

    @classmethod
    def from_op(
        cls,
        data: np.ndarray,
        parents: Sequence["Tensor"],
        backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]],
        op: str,
    ) -> "Tensor":
        """Wrap an op result; ``backward_fn(g)`` returns one gradient per parent."""
        _check_finite(data, op)
        out = cls.__new__(cls)
        data = np.ascontiguousarray(data)
        data.flags.writeable = False
        out.data = data
        out.id = next(_ids)
        out.op = op
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out.parents = tuple(parents)
            out.backward_fn = backward_fn
        else:
            out.parents = ()
            out.backward_fn = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError("item() requires a single-element tensor")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __getitem__(self, idx):
        return take(self, idx)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class Graph:
    """Reachable op records in topological (creation) order."""

    nodes: list[Tensor] = field(default_factory=list)

    @classmethod
    def from_output(cls, out: Tensor) -> "Graph":
        seen: dict[int, Tensor] = {}
        stack = [out]
        while stack:
            t = stack.pop()
            if t.id in seen or not t.requires_grad:
                continue
            seen[t.id] = t
            stack.extend(t.parents)
        return cls([seen[k] for k in sorted(seen)])

    def index(self, node: Tensor) -> int:
        return next(i for i, n in enumerate(self.nodes) if n is node)


def backward(loss: Tensor, graph: Graph | None = None) -> dict[Tensor, np.ndarray]:
    """Gradient of a scalar ``loss`` w.r.t. every node that requires grad.

    Returns a mapping keyed by tensor identity. Gradients from multiple
    consumers accumulate by summation.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    graph = graph or Graph.from_output(loss)
    grads: dict[int, np.ndarray] = {loss.id: np.ones_like(loss.data)}
    result: dict[Tensor, np.ndarray] = {}
    for node in reversed(graph.nodes):
        g = grads.get(node.id)
        if g is None:
            continue
        result[node] = g
        if node.backward_fn is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent.id in grads:
                grads[parent.id] = grads[parent.id] + pg
            else:
                grads[parent.id] = pg
    return result


def grad(loss: Tensor, wrt: Sequence[Tensor]) -> list[np.ndarray]:
    """Convenience wrapper: gradients for ``wrt`` (zeros where unreachable)."""
    g = backward(loss)
    return [g.get(t, np.zeros_like(t.data)) for t in wrt]


# --- elementwise -----------------------------------------------------------


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        for axis, (m, n) in enumerate(itertools.zip_longest(a.shape, b.shape)):
            if m != n:
                raise ShapeError(f"{op}: shape mismatch on axis {axis}: {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return Tensor.from_op(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return Tensor.from_op(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    return Tensor.from_op(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "div")
    out = a.data / b.data
    return Tensor.from_op(out, (a, b), lambda g: (g / b.data, -g * out / b.data), "div")


def scale(a: Tensor, c: float) -> Tensor:
    return Tensor.from_op(a.data * c, (a,), lambda g: (g * c,), "scale")


def square(a: Tensor) -> Tensor:
    return Tensor.from_op(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,), "square")


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return Tensor.from_op(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def norm(a: Tensor, axis=-1) -> Tensor:
    """Euclidean norm along ``axis``; the gradient at a zero vector is 0."""
    keep = np.sqrt(np.sum(a.data * a.data, axis=axis, keepdims=True))
    out = np.squeeze(keep, axis=axis)

    def bw(g):
        g = np.reshape(g, keep.shape)
        safe = np.where(keep > 0, keep, 1.0)
        return (a.data * np.where(keep > 0, g / safe, 0.0),)

    return Tensor.from_op(out, (a,), bw, "norm")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return Tensor.from_op(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def maximum(a: Tensor, floor: float) -> Tensor:
    """Elementwise max(a, floor); gradient flows only where a > floor."""
    mask = a.data > floor
    return Tensor.from_op(np.where(mask, a.data, floor), (a,), lambda g: (g * mask,), "maximum")


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Hard clamp with zero gradient outside [lo, hi]."""
    mask = (a.data >= lo) & (a.data <= hi)
    return Tensor.from_op(np.clip(a.data, lo, hi), (a,), lambda g: (g * mask,), "clamp")


# --- reductions and shape ops ----------------------------------------------


def sum(a: Tensor, axis=None) -> Tensor:  # noqa: A001
    out = np.sum(a.data, axis=axis)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return Tensor.from_op(np.asarray(out), (a,), bw, "sum")


def mean(a: Tensor, axis=None) -> Tensor:
    n = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(sum(a, axis), 1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    return Tensor.from_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def take(a: Tensor, idx) -> Tensor:
    """Basic (slice/int) indexing."""
    out = a.data[idx]

    def bw(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        return (full,)

    return Tensor.from_op(np.array(out), (a,), bw, "take")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return Tensor.from_op(out, tuple(tensors), lambda g: tuple(np.split(g, splits, axis=axis)), "concat")


# --- layers -----------------------------------------------------------------


def linear(x: Tensor, weights: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map ``W x + b``; ``x`` is [n] or a batch [N, n]."""
    if weights.ndim != 2:
        raise ShapeError(f"linear: weights must be 2-D, got {weights.shape}")
    if x.shape[-1] != weights.shape[1]:
        raise ShapeError(
            f"linear: inner dimension mismatch on axis {x.ndim - 1}: "
            f"input {x.shape[-1]} vs weights {weights.shape[1]}"
        )
    if bias is not None and bias.shape != (weights.shape[0],):
        raise ShapeError(f"linear: bias shape {bias.shape} != ({weights.shape[0]},)")
    out = x.data @ weights.data.T
    if bias is not None:
        out = out + bias.data

    def bw(g):
        g2 = g.reshape(-1, weights.shape[0])
        x2 = x.data.reshape(-1, weights.shape[1])
        gx = (g @ weights.data).reshape(x.shape)
        gw = g2.T @ x2
        gb = g2.sum(axis=0) if bias is not None else None
        return (gx, gw, gb)

    parents = (x, weights) if bias is None else (x, weights, bias)
    return Tensor.from_op(out, parents, bw, "linear")


matmul_fc = linear


def _pair(v) -> tuple[int, int]:
    return (int(v), int(v)) if np.isscalar(v) else (int(v[0]), int(v[1]))


def pad2d(x: Tensor, pad) -> Tensor:
    """Zero-pad the last two axes; ``pad`` is an int or an (h, w) pair."""
    ph, pw = _pair(pad)
    if ph == pw == 0:
        return x
    width = [(0, 0)] * (x.ndim - 2) + [(ph, ph), (pw, pw)]
    out = np.pad(x.data, width)
    h, w = x.shape[-2:]
    return Tensor.from_op(out, (x,), lambda g: (g[..., ph : ph + h, pw : pw + w],), "pad2d")


def _correlate(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    # x [N,C,H,W], k [O,C,kh,kw] -> [N,O,H',W']
    win = sliding_window_view(x, k.shape[2:], axis=(2, 3))
    out = np.tensordot(win, k, axes=([1, 4, 5], [1, 2, 3]))
    return out.transpose(0, 3, 1, 2)


def conv2d(x: Tensor, kernels: Tensor, padding=0, bias: Tensor | None = None) -> Tensor:
    """Valid cross-correlation of a zero-padded input.

    ``x`` is [C, H, W] or a batch [N, C, H, W]; ``kernels`` is [O, C, kh, kw];
    ``padding`` is an int or an (h, w) pair.
    """
    if x.ndim not in (3, 4):
        raise ShapeError(f"conv2d: input must be 3-D or 4-D, got {x.shape}")
    if kernels.ndim != 4:
        raise ShapeError(f"conv2d: kernels must be 4-D, got {kernels.shape}")
    batched = x.ndim == 4
    xd = x.data if batched else x.data[None]
    n, c, h, w = xd.shape
    o, kc, kh, kw = kernels.shape
    if kc != c:
        raise ShapeError(f"conv2d: channel mismatch on axis {1 if batched else 0}: input {c} vs kernels {kc}")
    ph, pw = _pair(padding)
    if kh > h + 2 * ph:
        raise ShapeError(f"conv2d: kernel height {kh} exceeds padded input height {h + 2 * ph} (axis {x.ndim - 2})")
    if kw > w + 2 * pw:
        raise ShapeError(f"conv2d: kernel width {kw} exceeds padded input width {w + 2 * pw} (axis {x.ndim - 1})")
    if bias is not None and bias.shape != (o,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({o},)")

    xp = np.pad(xd, [(0, 0), (0, 0), (ph, ph), (pw, pw)]) if ph or pw else xd
    out = _correlate(xp, kernels.data)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def bw(g):
        g4 = g if batched else g[None]
        win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
        gk = np.tensordot(g4, win, axes=([0, 2, 3], [0, 2, 3]))
        gpad = np.pad(g4, [(0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)])
        flipped = kernels.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
        gx = _correlate(gpad, np.ascontiguousarray(flipped))
        gx = gx[:, :, ph : ph + h, pw : pw + w]
        if not batched:
            gx = gx[0]
        gb = g4.sum(axis=(0, 2, 3)) if bias is not None else None
        return (gx, gk, gb)

    parents = (x, kernels) if bias is None else (x, kernels, bias)
    return Tensor.from_op(out if batched else out[0], parents, bw, "conv2d")
