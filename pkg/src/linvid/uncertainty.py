"""Latent correction delta: corrected code, inner gradient-descent inference,
the min-over-delta training step, test-time resampling and the skip probe.

The corrected code is ``base + (W1 delta) * (a0 z^t + a1 z^{t-1})`` where
``base`` is ``z^t`` (``"as-written"``) or the extrapolated code itself
(``"extrapolation-base"``). ``W1`` is stored as [code dim, delta dim] so that
``W1 delta`` lives in code space. With ``phase_only`` on a pooled model the
correction touches the phase vector only and magnitudes are averaged as usual.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .model import (
    Code,
    LossBreakdown,
    ModelConfig,
    code_from_vector,
    code_vector,
    combine_loss,
    decode,
    encode,
    encode_triplet,
    prediction_error,
)
from .tensor import NumericError, ShapeError, Tensor

BASES = ("as-written", "extrapolation-base")


@dataclass(frozen=True)
class DeltaConfig:
    dim: int = 3
    k: int = 5
    alpha: float = 0.1
    phase_only: bool = True
    base: str = "as-written"
    backtrack: bool = True
    max_halvings: int = 20

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"delta.dim must be >= 1, got {self.dim}")
        if self.k < 1:
            raise ValueError(f"delta.k must be >= 1, got {self.k}")
        if self.alpha < 0:
            raise ValueError(f"delta.alpha must be >= 0, got {self.alpha}")
        if self.base not in BASES:
            raise ValueError(f"delta.base must be one of {BASES}, got {self.base!r}")

    def validate(self, mcfg: ModelConfig) -> None:
        if mcfg.arch == "deep-1":
            raise ValueError("delta: deep-1 has no code-space predictor to correct")
        if self.dim * 8 > mcfg.code_size:
            raise ValueError(f"delta.dim {self.dim} exceeds code size / 8 ({mcfg.code_size} / 8)")

    def to_json(self) -> dict:
        return asdict(self)


def w1_shape(mcfg: ModelConfig, dcfg: DeltaConfig) -> tuple[int, int]:
    if mcfg.pooled and dcfg.phase_only:
        grid = mcfg.pool.grid_shape(mcfg.feature_shape)
        return (int(np.prod(grid)) * mcfg.pool.phase_dim, dcfg.dim)
    return (mcfg.code_size, dcfg.dim)


def init_w1(mcfg: ModelConfig, dcfg: DeltaConfig, rng: np.random.Generator, dtype=np.float64) -> np.ndarray:
    shape = w1_shape(mcfg, dcfg)
    bound = 1.0 / np.sqrt(shape[1])
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def corrected_code(z_t: Tensor, z_tm1: Tensor, delta: Tensor, W1: Tensor, a=(2.0, -1.0), base: str = "as-written") -> Tensor:
    """Flat corrected code for [D] or [N, D] codes and [k] or [N, k] deltas."""
    z_t, z_tm1, delta, W1 = (T.as_tensor(v) for v in (z_t, z_tm1, delta, W1))
    if z_t.shape != z_tm1.shape:
        raise ShapeError(f"corrected_code: code shapes differ {z_t.shape} vs {z_tm1.shape}")
    if W1.ndim != 2 or W1.shape[0] != z_t.shape[-1] or W1.shape[1] != delta.shape[-1]:
        raise ShapeError(
            f"corrected_code: W1 {W1.shape} must be [code dim {z_t.shape[-1]}, delta dim {delta.shape[-1]}]"
        )
    extrap = T.scale(z_t, float(a[0])) + T.scale(z_tm1, float(a[1]))
    start = z_t if base == "as-written" else extrap
    return start + T.linear(delta, W1) * extrap


def predict_with_delta(code_t, code_tm1, delta: Tensor, W1: Tensor, mcfg: ModelConfig, dcfg: DeltaConfig):
    """Predicted code for the next frame, corrected by ``delta``."""
    if not mcfg.pooled:
        return corrected_code(code_t, code_tm1, delta, W1, mcfg.a, dcfg.base)
    n = code_t.m.shape[0]
    if dcfg.phase_only:
        m = T.scale(code_t.m + code_tm1.m, 0.5)
        p_t = T.reshape(code_t.p, (n, -1))
        p_tm1 = T.reshape(code_tm1.p, (n, -1))
        p = corrected_code(p_t, p_tm1, delta, W1, mcfg.a, dcfg.base)
        p = T.clamp(T.reshape(p, code_t.p.shape), -1.0, 1.0)
        return Code(m, p, code_t.spec, code_t.in_shape)
    vec = corrected_code(code_vector(code_t), code_vector(code_tm1), delta, W1, mcfg.a, dcfg.base)
    out = code_from_vector(vec, code_t)
    return Code(T.maximum(out.m, 0.0), T.clamp(out.p, -1.0, 1.0), out.spec, out.in_shape)


@dataclass
class DeltaState:
    delta: np.ndarray
    trace: np.ndarray  # k + 1 prediction errors, trace[0] at delta = 0

    @property
    def final(self) -> float:
        return float(self.trace[-1])


@dataclass
class DeltaBatch:
    path: np.ndarray  # [N, k + 1, dim], path[:, 0] == 0
    traces: np.ndarray  # [N, k + 1]

    @property
    def deltas(self) -> np.ndarray:
        return self.path[:, -1]

    def __len__(self) -> int:
        return len(self.path)

    def __getitem__(self, i: int) -> DeltaState:
        return DeltaState(self.deltas[i], self.traces[i])

    def states(self) -> list[DeltaState]:
        return [self[i] for i in range(len(self))]

    @classmethod
    def concat(cls, batches: list["DeltaBatch"]) -> "DeltaBatch":
        return cls(np.concatenate([b.path for b in batches]), np.concatenate([b.traces for b in batches]))


def _const(params):
    return {k: (v if isinstance(v, Tensor) else Tensor(v)) for k, v in params.items()}


def infer_delta(frames, params, W1, mcfg: ModelConfig, dcfg: DeltaConfig, codes=None) -> DeltaBatch:
    """``k`` gradient steps on the prediction error w.r.t. delta, from delta = 0.

    Parameters stay frozen. With ``backtrack`` the step size is halved per
    sample until the error does not increase, so every trace is
    non-increasing; if no halving helps, delta stays put for that step.
    """
    frames = np.asarray(frames.data if isinstance(frames, Tensor) else frames)
    params = _const(params)
    W1t = Tensor(np.asarray(W1.data if isinstance(W1, Tensor) else W1))
    if codes is None:
        codes = (encode(Tensor(frames[:, 0]), params, mcfg), encode(Tensor(frames[:, 1]), params, mcfg))
    z_tm1, z_t = codes[0], codes[1]
    target = Tensor(frames[:, 2])
    n = len(frames)

    def errors(delta: np.ndarray, with_grad: bool = False):
        d = Tensor(delta, requires_grad=with_grad)
        pred = decode(predict_with_delta(z_t, z_tm1, d, W1t, mcfg, dcfg), params, mcfg)
        err = prediction_error(pred, target)
        if not with_grad:
            return err.data.copy()
        g = T.backward(T.sum(err)).get(d)
        g = np.zeros_like(delta) if g is None else g
        if not np.isfinite(g).all():
            raise NumericError("infer_delta: non-finite gradient w.r.t. delta")
        return err.data.copy(), g

    delta = np.zeros((n, dcfg.dim))
    path = np.zeros((n, dcfg.k + 1, dcfg.dim))
    trace = np.zeros((n, dcfg.k + 1))
    err, g = errors(delta, True)
    trace[:, 0] = err
    for i in range(1, dcfg.k + 1):
        alpha = np.full(n, dcfg.alpha)
        cand = delta - alpha[:, None] * g
        cand_err = errors(cand)
        if dcfg.backtrack:
            bad = cand_err > err
            for _ in range(dcfg.max_halvings):
                if not bad.any():
                    break
                alpha[bad] *= 0.5
                cand[bad] = delta[bad] - alpha[bad, None] * g[bad]
                cand_err = errors(cand)
                bad = cand_err > err
            # give up on samples that never improved
            cand[bad] = delta[bad]
            cand_err[bad] = err[bad]
        delta = cand
        if i < dcfg.k:
            err, g = errors(delta, True)
        else:
            err = cand_err
        trace[:, i] = err
        path[:, i] = delta
    return DeltaBatch(path, trace)


def loss_with_delta(frames, params: dict[str, Tensor], W1: Tensor, delta: np.ndarray, mcfg: ModelConfig, dcfg: DeltaConfig) -> LossBreakdown:
    """Prediction error with the given (inferred) delta, minus the curvature term."""
    frames = T.as_tensor(frames)
    codes = encode_triplet(frames, params, mcfg)
    z_tm1, z_t, _ = codes
    pred = decode(predict_with_delta(z_t, z_tm1, Tensor(delta), W1, mcfg, dcfg), params, mcfg)
    return combine_loss(prediction_error(pred, frames[:, 2]), codes, mcfg)


def train_step_uncertain(frames, params, W1: np.ndarray, mcfg: ModelConfig, dcfg: DeltaConfig, optimizer):
    """Infer delta_k per sample, then one optimizer step on W and W1 with delta fixed.

    ``params`` is a :class:`~linvid.model.ModelParams`; its arrays and ``W1``
    are updated in place. Returns the delta batch and the loss breakdown.
    """
    states = infer_delta(frames, params.arrays, W1, mcfg, dcfg)
    pt = params.tensors(requires_grad=True)
    w1t = Tensor(W1, requires_grad=True, dtype=W1.dtype)
    loss = loss_with_delta(frames, pt, w1t, states.deltas, mcfg, dcfg)
    grads = T.backward(loss.total)
    g = {k: grads.get(v, np.zeros_like(v.data)) for k, v in pt.items()}
    g["W1"] = grads.get(w1t, np.zeros_like(W1))
    arrays = dict(params.arrays, W1=W1)
    optimizer.step(arrays, g)
    return states, loss


# --- test-time sampling ------------------------------------------------------


@dataclass
class DeltaDistribution:
    samples: np.ndarray  # [n, dim]

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=np.float64))
        if len(self.samples) < 1 or self.samples.size == 0:
            raise ValueError("DeltaDistribution: need at least one stored delta")

    @property
    def mean(self) -> np.ndarray:
        return self.samples.mean(axis=0)

    @property
    def cov(self) -> np.ndarray:
        if len(self.samples) < 2:
            return np.zeros((self.samples.shape[1],) * 2)
        return np.cov(self.samples, rowvar=False, ddof=1).reshape((self.samples.shape[1],) * 2)

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        idx = rng.integers(len(self.samples), size=size)
        return self.samples[idx]


def estimate_and_sample_delta(states, seed: int = 0):
    """Empirical delta distribution plus a seeded resampler ``draw(size=None)``."""
    if isinstance(states, DeltaBatch):
        samples = states.deltas
    else:
        states = list(states)
        if not states:
            raise ValueError("estimate_and_sample_delta: empty collection")
        samples = np.stack([s.delta for s in states])
    dist = DeltaDistribution(samples)
    rng = np.random.default_rng(seed)
    return dist, lambda size=None: dist.sample(rng, size)


# --- linear probe ------------------------------------------------------------------


def _fit_logistic(x: np.ndarray, y: np.ndarray, steps: int = 2000, lr: float = 0.5, l2: float = 1e-4):
    w = np.zeros(x.shape[1])
    b = 0.0
    for _ in range(steps):
        z = np.clip(x @ w + b, -30, 30)
        p = 1.0 / (1.0 + np.exp(-z))
        r = p - y
        w -= lr * (x.T @ r / len(y) + l2 * w)
        b -= lr * r.mean()
    return w, b


def probe_skip_variable(deltas_train, s_train, deltas_test, s_test, steps: int = 2000) -> float:
    """Held-out accuracy of a logistic-regression probe from delta to s."""
    x_tr = np.atleast_2d(np.asarray(deltas_train, dtype=np.float64))
    x_te = np.atleast_2d(np.asarray(deltas_test, dtype=np.float64))
    if x_tr.shape[0] == 1 and len(np.atleast_1d(s_train)) > 1:
        x_tr, x_te = x_tr.T, x_te.T
    y_tr = np.asarray(s_train, dtype=np.float64)
    y_te = np.asarray(s_test, dtype=np.float64)
    if len(np.unique(y_tr)) < 2:
        raise ValueError("probe_skip_variable: training labels hold a single class")
    mu, sd = x_tr.mean(axis=0), x_tr.std(axis=0)
    sd[sd == 0] = 1.0
    w, b = _fit_logistic((x_tr - mu) / sd, y_tr, steps)
    pred = ((x_te - mu) / sd) @ w + b > 0
    return float((pred == (y_te > 0.5)).mean())


def split_probe(deltas: np.ndarray, s: np.ndarray, seed: int = 0, train_frac: float = 0.8, shuffle_labels: bool = False) -> float:
    """Seeded 80/20 split probe; ``shuffle_labels`` gives the permutation baseline."""
    rng = np.random.default_rng(seed)
    s = np.asarray(s)
    if shuffle_labels:
        s = rng.permutation(s)
    idx = rng.permutation(len(s))
    cut = int(round(train_frac * len(s)))
    tr, te = idx[:cut], idx[cut:]
    return probe_skip_variable(deltas[tr], s[tr], deltas[te], s[te])


def write_delta_csv(path, batch: DeltaBatch) -> None:
    """One row per (sample, step): prediction error and delta at that step."""
    dim = batch.deltas.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample", "step", "prediction_error"] + [f"delta_{j}" for j in range(dim)])
        for i in range(len(batch)):
            for step, e in enumerate(batch.traces[i]):
                w.writerow([i, step, repr(float(e))] + [repr(float(v)) for v in batch.path[i, step]])
