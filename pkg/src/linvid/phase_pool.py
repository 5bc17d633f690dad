"""Soft max / soft argmax pooling over (feature, x, y) neighborhoods and the
matching un-pooling operator.

Activations are laid out as ``[F, X, Y]`` or batched ``[N, F, X, Y]``. A pool
group spans ``(gf, gx, gy)`` cells and groups are placed every
``(sf, sx, sy)`` cells; overlap is allowed, partial edge groups are not.
Within a group each pooled axis (extent > 1) carries coordinates running from
-1 to +1 in equal steps.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .tensor import ShapeError, Tensor


class ContractError(ValueError):
    """Operand violates an operator precondition."""


@dataclass(frozen=True)
class PoolSpec:
    group: tuple[int, int, int]
    stride: tuple[int, int, int] | None = None
    beta: float = 5.0

    def __post_init__(self):
        object.__setattr__(self, "group", tuple(int(g) for g in self.group))
        stride = self.group if self.stride is None else tuple(int(s) for s in self.stride)
        object.__setattr__(self, "stride", stride)
        if len(self.group) != 3 or len(self.stride) != 3:
            raise ValueError("PoolSpec: group and stride need three entries (f, x, y)")
        if min(self.group) < 1 or min(self.stride) < 1:
            raise ValueError("PoolSpec: group extents and strides must be positive")
        if self.beta < 0:
            raise ValueError(f"PoolSpec: beta must be >= 0, got {self.beta}")

    @property
    def pooled_axes(self) -> tuple[int, ...]:
        return tuple(i for i, g in enumerate(self.group) if g > 1)

    @property
    def phase_dim(self) -> int:
        return len(self.pooled_axes)

    def grid_shape(self, in_shape) -> tuple[int, int, int]:
        """Number of groups along each axis for an ``[F, X, Y]`` input."""
        counts = []
        for axis, (n, g, s) in enumerate(zip(in_shape, self.group, self.stride)):
            if g > n or (n - g) % s:
                raise ShapeError(
                    f"pool: axis {axis} of extent {n} is not tiled by group {g} with stride {s}"
                )
            counts.append((n - g) // s + 1)
        return tuple(counts)

    def to_json(self) -> dict:
        return {"group": list(self.group), "stride": list(self.stride), "beta": self.beta}

    @classmethod
    def from_json(cls, d: dict) -> "PoolSpec":
        if "group" not in d:
            raise ValueError("pool.group: missing")
        stride = d.get("stride")
        return cls(tuple(d["group"]), tuple(stride) if stride is not None else None, float(d.get("beta", 5.0)))


def coordinate_grid(extent: int) -> np.ndarray:
    """Equally spaced coordinates on [-1, 1]; a single cell sits at 0."""
    if extent == 1:
        return np.zeros(1)
    return np.linspace(-1.0, 1.0, extent)


@dataclass(frozen=True)
class _Layout:
    index: np.ndarray  # [G, K] flat input index of every group member
    coords: np.ndarray  # [A, K] member coordinates along each pooled axis
    base: np.ndarray  # [G, 3] group origin
    grid: tuple[int, int, int]
    unique: bool


@lru_cache(maxsize=64)
def _layout(spec: PoolSpec, in_shape: tuple[int, int, int]) -> _Layout:
    grid = spec.grid_shape(in_shape)
    _, X, Y = in_shape
    base = np.array(list(itertools.product(*(range(0, n * s, s) for n, s in zip(grid, spec.stride)))))
    offs = np.array(list(itertools.product(*(range(g) for g in spec.group))))
    pos = base[:, None, :] + offs[None, :, :]
    index = pos[..., 0] * X * Y + pos[..., 1] * Y + pos[..., 2]
    coords = np.stack([coordinate_grid(spec.group[a])[offs[:, a]] for a in spec.pooled_axes]) if spec.pooled_axes else np.zeros((0, len(offs)))
    unique = len(np.unique(index)) == index.size
    return _Layout(index, coords, base, grid, unique)


def _gather(z: Tensor, spec: PoolSpec):
    if z.ndim not in (3, 4):
        raise ShapeError(f"pool: expected [F,X,Y] or [N,F,X,Y], got {z.shape}")
    zd = z.data if z.ndim == 4 else z.data[None]
    if zd.size and zd.min() < 0:
        raise ContractError("pool: activations must be non-negative")
    lay = _layout(spec, zd.shape[1:])
    zg = zd.reshape(len(zd), -1)[:, lay.index]
    # softmax over each group, shifted for stability
    e = np.exp(spec.beta * (zg - zg.max(axis=-1, keepdims=True)))
    w = e / e.sum(axis=-1, keepdims=True)
    return zd, lay, zg, w


def _scatter(gzg: np.ndarray, lay: _Layout, zd: np.ndarray, batched: bool) -> np.ndarray:
    n = len(zd)
    gz = np.zeros((n, zd[0].size))
    if lay.unique:
        gz[:, lay.index] = gzg
    else:
        np.add.at(gz, (np.arange(n)[:, None, None], lay.index[None]), gzg)
    gz = gz.reshape(zd.shape)
    return gz if batched else gz[0]


def softmax_weights(z: Tensor, spec: PoolSpec) -> np.ndarray:
    """Per-group softmax weights, shape [N, G, K] (diagnostic use)."""
    return _gather(z, spec)[3]


def soft_max_pool(z: Tensor, spec: PoolSpec) -> Tensor:
    """Softmax-weighted mean activation per group (the soft max)."""
    batched = z.ndim == 4
    zd, lay, zg, w = _gather(z, spec)
    m = (w * zg).sum(axis=-1)

    def bw(g):
        g = g.reshape(len(zd), -1)[..., None]
        return (_scatter(g * w * (1.0 + spec.beta * (zg - m[..., None])), lay, zd, batched),)

    out = m.reshape((len(zd),) + lay.grid)
    return Tensor.from_op(out if batched else out[0], (z,), bw, "soft_max_pool")


def soft_argmax_pool(z: Tensor, spec: PoolSpec) -> Tensor:
    """Softmax-expected group coordinates, shape [(N,) A, gf, gx, gy]."""
    batched = z.ndim == 4
    zd, lay, zg, w = _gather(z, spec)
    p = np.einsum("ngk,ak->nag", w, lay.coords)
    np.clip(p, -1.0, 1.0, out=p)

    def bw(g):
        g = g.reshape(len(zd), len(lay.coords), -1)
        # d p_a / d z_j = beta * w_j * (c_aj - p_a)
        proj = np.einsum("nag,ak->ngk", g, lay.coords) - np.einsum("nag,nag->ng", g, p)[..., None]
        return (_scatter(spec.beta * w * proj, lay, zd, batched),)

    out = p.reshape((len(zd), len(lay.coords)) + lay.grid)
    return Tensor.from_op(out if batched else out[0], (z,), bw, "soft_argmax_pool")


@dataclass
class Code:
    """Factorized code: magnitudes ``m`` and phases ``p`` of every pool group."""

    m: Tensor
    p: Tensor
    spec: PoolSpec
    in_shape: tuple[int, int, int]
    meta: dict = field(default_factory=dict)

    @property
    def batched(self) -> bool:
        return self.m.ndim == 4

    @property
    def flat_dim(self) -> int:
        per = self.m.size + self.p.size
        return per // len(self.m.data) if self.batched else per


def phase_pool(z: Tensor, spec: PoolSpec) -> Code:
    """Soft max and soft argmax channels of every group."""
    zshape = z.shape if z.ndim == 3 else z.shape[1:]
    return Code(soft_max_pool(z, spec), soft_argmax_pool(z, spec), spec, tuple(zshape))


def check_phases(p: np.ndarray, tol: float = 1e-12) -> None:
    if p.size and np.abs(p).max() > 1.0 + tol:
        raise ContractError(f"unpool: phase {np.abs(p).max():.6g} outside [-1, 1]")


def unpool(code: Code, out_shape=None) -> Tensor:
    """Deposit each magnitude at its phase position by multilinear interpolation.

    Overlapping groups add their deposits. Differentiable in both ``m`` and
    ``p``; at exact grid points the phase derivative is the one-sided one.
    """
    spec = code.spec
    out_shape = tuple(out_shape or code.in_shape)
    lay = _layout(spec, out_shape)
    batched = code.batched
    md = code.m.data if batched else code.m.data[None]
    pd = code.p.data if batched else code.p.data[None]
    n = len(md)
    A = spec.phase_dim
    G = lay.index.shape[0]
    if md.shape[1:] != lay.grid or pd.shape[1:] != (A,) + lay.grid:
        raise ShapeError(f"unpool: code shapes m{md.shape} p{pd.shape} do not match grid {lay.grid}")
    check_phases(pd)
    m = md.reshape(n, G)
    p = pd.reshape(n, A, G)
    _, X, Y = out_shape
    strides = np.array([X * Y, Y, 1])
    base_flat = lay.base @ strides  # [G]

    ext = np.array([spec.group[a] for a in spec.pooled_axes])  # [A]
    u = (p + 1.0) * 0.5 * (ext[None, :, None] - 1)
    lo = np.clip(np.floor(u), 0, ext[None, :, None] - 2).astype(np.int64)
    t = u - lo
    ax_stride = strides[list(spec.pooled_axes)]
    dudp = 0.5 * (ext - 1)

    corners = []
    for bits in itertools.product((0, 1), repeat=A):
        bits_a = np.array(bits, dtype=np.int64).reshape(1, A, 1)
        w_axes = np.where(bits_a == 1, t, 1.0 - t)  # [n, A, G]
        idx = base_flat[None, :] + ((lo + bits_a) * ax_stride[None, :, None]).sum(axis=1)
        flat = idx + (np.arange(n) * X * Y * out_shape[0])[:, None]
        corners.append((bits, w_axes, flat))

    size = n * int(np.prod(out_shape))
    out = np.zeros(size)
    for _, w_axes, flat in corners:
        out += np.bincount(flat.ravel(), (m * w_axes.prod(axis=1)).ravel(), minlength=size)
    out = out.reshape((n,) + out_shape)

    def bw(g):
        gf = g.reshape(-1) if batched else g[None].reshape(-1)
        gm = np.zeros((n, G))
        gp = np.zeros((n, A, G))
        for bits, w_axes, flat in corners:
            gval = gf[flat]
            gm += gval * w_axes.prod(axis=1)
            for a in range(A):
                others = np.prod(np.delete(w_axes, a, axis=1), axis=1) if A > 1 else 1.0
                sign = 1.0 if bits[a] else -1.0
                gp[:, a] += gval * m * sign * others * dudp[a]
        gm = gm.reshape(md.shape)
        gp = gp.reshape(pd.shape)
        return (gm if batched else gm[0], gp if batched else gp[0])

    return Tensor.from_op(out if batched else out[0], (code.m, code.p), bw, "unpool")
