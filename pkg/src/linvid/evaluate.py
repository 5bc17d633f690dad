"""Code-space interpolation, curvature measurement and filter tiling."""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .datagen import TripletSet
from .model import ModelConfig, ModelParams, encode, encode_triplet, phase_vector, render, curvature_penalty
from .phase_pool import Code
from .tensor import Tensor

DEFAULT_TAUS = (0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0)
INTERP_MODES = ("linear", "mean-magnitude")


def _mix(a: np.ndarray, b: np.ndarray, tau: float) -> np.ndarray:
    # (1 - tau) a + tau b hits both endpoints bit-exactly, unlike a + tau (b - a)
    return (1.0 - tau) * a + tau * b


def interpolate_codes(z1, z2, tau: float, mode: str = "linear"):
    """Code at ``tau`` on the line through z1 (tau=0) and z2 (tau=1).

    For pooled codes the phases are clamped back into [-1, 1] when ``tau``
    extrapolates; ``mean-magnitude`` holds m at the endpoint mean.
    """
    if mode not in INTERP_MODES:
        raise ValueError(f"interpolation mode must be one of {INTERP_MODES}, got {mode!r}")
    if not isinstance(z1, Code):
        return Tensor(_mix(z1.data, z2.data, tau))
    if z1.m.shape != z2.m.shape:
        raise T.ShapeError(f"interpolate: code shapes differ {z1.m.shape} vs {z2.m.shape}")
    if mode == "linear":
        m = np.maximum(_mix(z1.m.data, z2.m.data, tau), 0.0)
    else:
        m = 0.5 * (z1.m.data + z2.m.data)
    p = np.clip(_mix(z1.p.data, z2.p.data, tau), -1.0, 1.0)
    return Code(Tensor(m), Tensor(p), z1.spec, z1.in_shape)


def reconstruct(frame: np.ndarray, params: ModelParams, mcfg: ModelConfig) -> np.ndarray:
    """decode(encode(frame)) for one [C, H, W] frame."""
    pt = params.tensors()
    return render(encode(Tensor(frame[None]), pt, mcfg), pt, mcfg).data[0]


def interpolate(
    frame1: np.ndarray,
    frame2: np.ndarray,
    params: ModelParams,
    mcfg: ModelConfig,
    taus=DEFAULT_TAUS,
    mode: str = "linear",
) -> np.ndarray:
    """Decoded frames [len(taus), C, H, W] along the code-space line."""
    taus = list(taus)
    if not taus:
        raise ValueError("interpolate: tau list is empty")
    for f in (frame1, frame2):
        if tuple(f.shape) != tuple(mcfg.frame_shape):
            raise T.ShapeError(f"interpolate: frame shape {tuple(f.shape)} != model frame shape {tuple(mcfg.frame_shape)}")
    pt = params.tensors()
    z1 = encode(Tensor(frame1[None]), pt, mcfg)
    z2 = encode(Tensor(frame2[None]), pt, mcfg)
    # one decode per tau, so every image is computed exactly like a lone reconstruction
    return np.stack([render(interpolate_codes(z1, z2, float(t), mode), pt, mcfg).data[0] for t in taus])


def measure_curvature(params: ModelParams, mcfg: ModelConfig, data: TripletSet, chunk: int = 128) -> dict:
    """Mean cosine of successive steps on raw pixels and on codes (phases for pooled models)."""
    if data.frames.ndim != 5 or data.frames.shape[1] < 3:
        raise ValueError("curvature: need sequences of length >= 3")
    pt = params.tensors()
    x = data.frames.reshape(len(data), data.frames.shape[1], -1)
    inp = curvature_penalty(Tensor(x[:, 0]), Tensor(x[:, 1]), Tensor(x[:, 2]), mcfg.eps_curv).data
    code = []
    for i in range(0, len(data), chunk):
        z = [phase_vector(c) for c in encode_triplet(Tensor(data.frames[i : i + chunk]), pt, mcfg)]
        code.append(curvature_penalty(*z, mcfg.eps_curv).data)
    return {"input_cosine": float(inp.mean()), "code_cosine": float(np.concatenate(code).mean()), "count": len(data)}


# --- filter tiling --------------------------------------------------------------


def tile_layout(n: int, group: int, kh: int, kw: int, gap: int = 1) -> tuple[int, int, int, int]:
    """``(rows, cols, height, width)`` for ``n`` filters, one pool group per row."""
    if n < 1 or group < 1:
        raise ValueError("tile_layout: need at least one filter and a positive group size")
    rows, cols = math.ceil(n / group), min(group, n)
    return rows, cols, rows * kh + (rows + 1) * gap, cols * kw + (cols + 1) * gap


def normalize_filter(k: np.ndarray) -> np.ndarray:
    """Per-filter min/max to [0, 1]; a constant filter maps to mid-gray."""
    lo, hi = float(k.min()), float(k.max())
    if hi - lo <= 1e-12 * max(1.0, abs(hi)):
        return np.full(k.shape, 0.5)
    return (k - lo) / (hi - lo)


def tile_filters(filters: np.ndarray, group: int, gap: int = 1) -> np.ndarray:
    """[n, kh, kw] filters on a black canvas, ``group`` per row."""
    n, kh, kw = filters.shape
    rows, cols, h, w = tile_layout(n, group, kh, kw, gap)
    canvas = np.zeros((h, w))
    for i, k in enumerate(filters):
        r, c = divmod(i, group)
        y, x = gap + r * (kh + gap), gap + c * (kw + gap)
        canvas[y : y + kh, x : x + kw] = normalize_filter(k)
    return canvas


def conv_filters(params: ModelParams, mcfg: ModelConfig) -> dict[str, np.ndarray]:
    """Pixel-facing kernels as [n, kh, kw]: the first encoder and the last decoder conv."""
    arrays = params.arrays
    out = {}
    enc = next((k for k in ("enc.conv.w", "enc.conv1.w") if k in arrays), None)
    dec = next((k for k in ("dec.conv.w", "dec.conv2.w") if k in arrays), None)
    if enc is None and dec is None:
        raise ValueError(f"viz: checkpoint has no convolution layers (tensors: {sorted(arrays)})")
    if enc is not None:
        w = arrays[enc]
        out["encoder"] = w.reshape(-1, *w.shape[2:])
    if dec is not None:
        w = arrays[dec]
        # decoder kernels are [out pixels, in features, kh, kw]; tile by feature
        out["decoder"] = np.transpose(w, (1, 0, 2, 3)).reshape(-1, *w.shape[2:])
    return out


def filter_group_size(mcfg: ModelConfig) -> int:
    if mcfg.pooled and mcfg.arch.startswith("shallow"):
        return mcfg.pool.group[0]
    return 4
