"""Siamese encoder, code-space prediction, decoder and the prediction +
curvature loss.

Five architectures, scaled down for CPU work:

``shallow-1``  conv+relu -> phase pool (feature groups of 4, no overlap)
               -> average-magnitude / extrapolated-phase prediction
               -> unpool -> conv
``shallow-2``  as shallow-1 but feature groups overlap (stride 2)
``deep-1``     conv+relu, conv+relu, fc+relu; the decoder sees both codes
               concatenated (its first fc layer is a learned predictor)
``deep-2``     same encoder, fixed extrapolation ``a0 z^t + a1 z^{t-1}``
``deep-3``     same encoder with the fc output reshaped to a feature grid and
               phase-pooled; decoder starts with unpool

Deep decoders: fc+relu -> reshape -> pad -> conv+relu -> pad -> conv.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import tensor as T
from .phase_pool import Code, PoolSpec, phase_pool, unpool
from .tensor import ShapeError, Tensor

ARCHITECTURES = ("shallow-1", "shallow-2", "deep-1", "deep-2", "deep-3")
POOLED = ("shallow-1", "shallow-2", "deep-3")


@dataclass(frozen=True)
class ModelConfig:
    arch: str = "deep-2"
    frame_shape: tuple[int, int, int] = (1, 16, 16)
    kernel: tuple[int, int] = (5, 5)
    enc_channels: tuple[int, ...] = (4, 8)
    code_dim: int = 64
    dec_channels: tuple[int, int] = (8, 4)
    pool: PoolSpec | None = None
    pool_grid: tuple[int, int, int] | None = None
    a: tuple[float, float] = (2.0, -1.0)
    lam: float = 0.1
    curvature_on_phase: bool = True
    eps_curv: float = 1e-6

    def __post_init__(self):
        if self.arch not in ARCHITECTURES:
            raise ValueError(f"arch: unknown architecture {self.arch!r}")
        if self.lam < 0:
            raise ValueError(f"lam: curvature weight must be >= 0, got {self.lam}")
        if len(self.a) != 2:
            raise ValueError("a: extrapolation vector needs two entries")
        if self.pooled and self.pool is None:
            raise ValueError(f"pool: {self.arch} requires a pool spec")
        if self.arch.startswith("shallow") and len(self.enc_channels) != 1:
            raise ValueError("enc_channels: shallow architectures have one conv layer")
        if self.arch.startswith("deep") and len(self.enc_channels) != 2:
            raise ValueError("enc_channels: deep architectures have two conv layers")
        if self.arch == "deep-3":
            if self.pool_grid is None or int(np.prod(self.pool_grid)) != self.code_dim:
                raise ValueError("pool_grid: deep-3 needs a feature grid with prod == code_dim")
        if self.arch.startswith("deep") and any(k % 2 == 0 for k in self.kernel):
            raise ValueError("kernel: deep decoders need odd kernels for same-size padding")

    @property
    def pooled(self) -> bool:
        return self.arch in POOLED

    @property
    def feature_shape(self) -> tuple[int, int, int]:
        """Shape of the activations entering the pool (pooled archs)."""
        if self.arch == "deep-3":
            return tuple(self.pool_grid)
        _, h, w = self.frame_shape
        kh, kw = self.kernel
        return (self.enc_channels[0], h - kh + 1, w - kw + 1)

    @property
    def conv_out_shape(self) -> tuple[int, int, int]:
        _, h, w = self.frame_shape
        kh, kw = self.kernel
        n = len(self.enc_channels)
        return (self.enc_channels[-1], h - n * (kh - 1), w - n * (kw - 1))

    @property
    def code_size(self) -> int:
        """Scalars per frame code (m and p together for pooled archs)."""
        if not self.pooled:
            return self.code_dim
        grid = self.pool.grid_shape(self.feature_shape)
        return int(np.prod(grid)) * (1 + self.pool.phase_dim)

    def to_json(self) -> dict:
        d = asdict(self)
        d["pool"] = self.pool.to_json() if self.pool else None
        return d

    @classmethod
    def from_json(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["pool"] = PoolSpec.from_json(d["pool"]) if d.get("pool") else None
        for key in ("frame_shape", "kernel", "enc_channels", "dec_channels", "pool_grid", "a"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)


def preset(arch: str, **overrides) -> ModelConfig:
    """Desk-scale versions of the five architectures on 16x16 frames."""
    if arch == "shallow-1":
        cfg = ModelConfig(arch, (1, 16, 16), (5, 5), (8,), 0, (0, 0), PoolSpec((4, 4, 4), (4, 4, 4)))
    elif arch == "shallow-2":
        cfg = ModelConfig(arch, (1, 16, 16), (5, 5), (8,), 0, (0, 0), PoolSpec((4, 4, 4), (2, 4, 4)))
    elif arch in ("deep-1", "deep-2"):
        cfg = ModelConfig(arch, (1, 16, 16), (5, 5), (4, 8), 64, (8, 4), lam=0.0)
    elif arch == "deep-3":
        cfg = ModelConfig(
            arch, (1, 16, 16), (5, 5), (4, 8), 256, (8, 4),
            pool=PoolSpec((1, 4, 4)), pool_grid=(16, 4, 4),
        )
    else:
        raise ValueError(f"arch: unknown architecture {arch!r}")
    return replace(cfg, **overrides)


# --- parameters -------------------------------------------------------------


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    kh, kw = cfg.kernel
    c_in, h, w = cfg.frame_shape
    shapes: dict[str, tuple[int, ...]] = {}
    if cfg.arch.startswith("shallow"):
        (c,) = cfg.enc_channels
        shapes["enc.conv.w"] = (c, c_in, kh, kw)
        shapes["enc.conv.b"] = (c,)
        shapes["dec.conv.w"] = (c_in, c, kh, kw)
        shapes["dec.conv.b"] = (c_in,)
        return shapes
    c1, c2 = cfg.enc_channels
    d1, d2 = cfg.dec_channels
    shapes["enc.conv1.w"] = (c1, c_in, kh, kw)
    shapes["enc.conv1.b"] = (c1,)
    shapes["enc.conv2.w"] = (c2, c1, kh, kw)
    shapes["enc.conv2.b"] = (c2,)
    shapes["enc.fc.w"] = (cfg.code_dim, int(np.prod(cfg.conv_out_shape)))
    shapes["enc.fc.b"] = (cfg.code_dim,)
    dec_in = 2 * cfg.code_dim if cfg.arch == "deep-1" else cfg.code_dim
    shapes["dec.fc.w"] = (d1 * h * w, dec_in)
    shapes["dec.fc.b"] = (d1 * h * w,)
    shapes["dec.conv1.w"] = (d2, d1, kh, kw)
    shapes["dec.conv1.b"] = (d2,)
    shapes["dec.conv2.w"] = (c_in, d2, kh, kw)
    shapes["dec.conv2.b"] = (c_in,)
    return shapes


@dataclass
class ModelParams:
    """Named weight arrays; one set serves every encoder evaluation."""

    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def init(cls, cfg: ModelConfig, rng: np.random.Generator, dtype=np.float64) -> "ModelParams":
        arrays = {}
        for name, shape in param_shapes(cfg).items():
            if name.endswith(".b"):
                arrays[name] = np.zeros(shape, dtype=dtype)
            else:
                fan_in = int(np.prod(shape[1:]))
                bound = 1.0 / np.sqrt(fan_in)
                arrays[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
        return cls(arrays)

    def tensors(self, requires_grad: bool = False) -> dict[str, Tensor]:
        return {k: Tensor(v, requires_grad=requires_grad, dtype=v.dtype) for k, v in self.arrays.items()}

    def copy(self) -> "ModelParams":
        return ModelParams({k: v.copy() for k, v in self.arrays.items()})


# --- network pieces ---------------------------------------------------------



def encode(frame, params: dict[str, Tensor], cfg: ModelConfig):
    """Frame(s) [N, C, H, W] (or a single [C, H, W]) -> Code or flat code [N, D]."""
    x = T.as_tensor(frame)
    single = x.ndim == 3
    if single:
        x = T.reshape(x, (1,) + x.shape)
    if x.shape[1:] != tuple(cfg.frame_shape):
        raise ShapeError(f"encode: frame shape {x.shape[1:]} != configured {tuple(cfg.frame_shape)}")
    n = x.shape[0]
    if cfg.arch.startswith("shallow"):
        z = T.relu(T.conv2d(x, params["enc.conv.w"], 0, params["enc.conv.b"]))
        code = phase_pool(z, cfg.pool)
    else:
        h = T.relu(T.conv2d(x, params["enc.conv1.w"], 0, params["enc.conv1.b"]))
        h = T.relu(T.conv2d(h, params["enc.conv2.w"], 0, params["enc.conv2.b"]))
        h = T.relu(T.linear(T.reshape(h, (n, -1)), params["enc.fc.w"], params["enc.fc.b"]))
        if cfg.arch == "deep-3":
            code = phase_pool(T.reshape(h, (n,) + tuple(cfg.pool_grid)), cfg.pool)
        else:
            code = h
    return _unbatch_code(code) if single else code


def _unbatch_code(code):
    if isinstance(code, Code):
        return Code(code.m[0], code.p[0], code.spec, code.in_shape)
    return code[0]


def decode(code, params: dict[str, Tensor], cfg: ModelConfig) -> Tensor:
    """Code (batched) -> frames [N, C, H, W].

    For deep-1 the code is the concatenation ``[z^t, z^{t-1}]``.
    """
    if isinstance(code, Code):
        if code.m.ndim == 3:
            code = Code(T.reshape(code.m, (1,) + code.m.shape), T.reshape(code.p, (1,) + code.p.shape), code.spec, code.in_shape)
        h = unpool(code, cfg.feature_shape)
        n = h.shape[0]
    else:
        h = code if code.ndim == 2 else T.reshape(code, (1, -1))
        n = h.shape[0]
    kh, kw = cfg.kernel
    c_in, H, W = cfg.frame_shape
    if cfg.arch.startswith("shallow"):
        return T.conv2d(h, params["dec.conv.w"], (kh - 1, kw - 1), params["dec.conv.b"])
    if cfg.arch == "deep-3":
        h = T.reshape(h, (n, -1))
    expected = params["dec.fc.w"].shape[1]
    if h.shape[1] != expected:
        raise ShapeError(f"decode: code dimension {h.shape[1]} != decoder input {expected}")
    d1, _ = cfg.dec_channels
    h = T.relu(T.linear(h, params["dec.fc.w"], params["dec.fc.b"]))
    h = T.reshape(h, (n, d1, H, W))
    pad = (kh // 2, kw // 2)
    h = T.relu(T.conv2d(T.pad2d(h, pad), params["dec.conv1.w"], 0, params["dec.conv1.b"]))
    return T.conv2d(T.pad2d(h, pad), params["dec.conv2.w"], 0, params["dec.conv2.b"])


def render(code, params: dict[str, Tensor], cfg: ModelConfig) -> Tensor:
    """Decode a single code as a frame. deep-1 sees the static pair ``[z, z]``."""
    if cfg.arch == "deep-1":
        code = T.concat([code, code], axis=1)
    return decode(code, params, cfg)


# --- prediction -------------------------------------------------------------


def extrapolate_code(z_t: Tensor, z_tm1: Tensor, a=(2.0, -1.0)) -> Tensor:
    """``a0 z^t + a1 z^{t-1}``."""
    if z_t.shape != z_tm1.shape:
        raise ShapeError(f"extrapolate_code: dimension mismatch {z_t.shape} vs {z_tm1.shape}")
    return T.scale(z_t, float(a[0])) + T.scale(z_tm1, float(a[1]))


def predict_mag_phase(code_t: Code, code_tm1: Code) -> Code:
    """Average the magnitudes, extrapolate the phases (clamped to [-1, 1])."""
    if code_t.spec != code_tm1.spec or code_t.m.shape != code_tm1.m.shape:
        raise ValueError("predict_mag_phase: codes come from different pool specs")
    m = T.scale(code_t.m + code_tm1.m, 0.5)
    p = T.clamp(T.scale(code_t.p, 2.0) - code_tm1.p, -1.0, 1.0)
    return Code(m, p, code_t.spec, code_t.in_shape)


def predict_code(code_t, code_tm1, cfg: ModelConfig):
    if cfg.arch == "deep-1":
        return T.concat([code_t, code_tm1], axis=1)
    if cfg.pooled:
        return predict_mag_phase(code_t, code_tm1)
    return extrapolate_code(code_t, code_tm1, cfg.a)


# --- code views -------------------------------------------------------------


def phase_vector(code) -> Tensor:
    """Per-sample vector the curvature term sees: phases, or the whole flat code."""
    if isinstance(code, Code):
        return T.reshape(code.p, (code.p.shape[0], -1))
    return code


def code_vector(code) -> Tensor:
    if isinstance(code, Code):
        n = code.m.shape[0]
        return T.concat([T.reshape(code.m, (n, -1)), T.reshape(code.p, (n, -1))], axis=1)
    return code


def code_from_vector(vec: Tensor, like: Code) -> Code:
    n = vec.shape[0]
    k = int(np.prod(like.m.shape[1:]))
    m = T.reshape(vec[:, :k], (n,) + like.m.shape[1:])
    p = T.reshape(vec[:, k:], (n,) + like.p.shape[1:])
    return Code(m, p, like.spec, like.in_shape)


# --- loss -------------------------------------------------------------------


def curvature_penalty(z_tm1: Tensor, z_t: Tensor, z_tp1: Tensor, eps: float = 1e-6) -> Tensor:
    """Cosine between successive code steps, norms floored at ``eps``.

    Inputs are [D] or [N, D]; returns a scalar or [N]. 1 means a straight,
    forward-moving trajectory.
    """
    d1 = z_t - z_tm1
    d2 = z_tp1 - z_t
    dot = T.sum(d1 * d2, axis=-1)
    den = T.maximum(T.norm(d1, -1), eps) * T.maximum(T.norm(d2, -1), eps)
    return dot / den


def prediction_error(pred: Tensor, target: Tensor) -> Tensor:
    """Per-sample ``0.5 * ||pred - target||^2``, shape [N]."""
    diff = T.reshape(pred - target, (pred.shape[0], -1))
    return T.scale(T.sum(T.square(diff), axis=1), 0.5)


@dataclass
class LossBreakdown:
    prediction: Tensor  # [N]
    cosine: Tensor  # [N]
    total: Tensor  # scalar mean over the batch
    lam: float

    @property
    def prediction_mean(self) -> float:
        return float(self.prediction.data.mean())

    @property
    def cosine_mean(self) -> float:
        return float(self.cosine.data.mean())

    @property
    def curvature(self) -> float:
        return self.lam * self.cosine_mean

    @property
    def value(self) -> float:
        return self.total.item()


def encode_triplet(frames, params, cfg: ModelConfig):
    """Encode ``frames`` [N, 3, C, H, W] frame by frame with shared weights."""
    x = T.as_tensor(frames)
    return tuple(encode(x[:, i], params, cfg) for i in range(3))


def combine_loss(pred_err: Tensor, codes, cfg: ModelConfig) -> LossBreakdown:
    z_tm1, z_t, z_tp1 = codes
    view = phase_vector if cfg.curvature_on_phase else code_vector
    cos = curvature_penalty(view(z_tm1), view(z_t), view(z_tp1), cfg.eps_curv)
    per = pred_err - T.scale(cos, cfg.lam)
    return LossBreakdown(pred_err, cos, T.mean(per), cfg.lam)


def loss_eq1(frames, params: dict[str, Tensor], cfg: ModelConfig) -> LossBreakdown:
    """Prediction error of the third frame minus ``lam`` times the code cosine."""
    frames = T.as_tensor(frames)
    codes = encode_triplet(frames, params, cfg)
    z_tm1, z_t, _ = codes
    pred = decode(predict_code(z_t, z_tm1, cfg), params, cfg)
    return combine_loss(prediction_error(pred, frames[:, 2]), codes, cfg)
