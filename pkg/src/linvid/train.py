"""Training loop, evaluation helpers and checkpoints."""

from __future__ import annotations

import csv
import io as _io
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import io
from . import tensor as T
from .datagen import TripletSet
from .model import ModelConfig, ModelParams, encode, loss_eq1, phase_vector, curvature_penalty
from .tensor import NumericError, Tensor
from .uncertainty import DeltaBatch, DeltaConfig, infer_delta, init_w1, loss_with_delta, w1_shape

METRIC_COLUMNS = ("epoch", "l2_error", "curvature_input", "curvature_code")


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 0.01
    momentum: float = 0.9
    batch_size: int = 16
    epochs: int = 10
    clip_norm: float | None = None
    lr_end_factor: float = 1.0  # linear decay to lr * factor at the last epoch

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError(f"optim.lr must be >= 0, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"optim.momentum must be in [0, 1), got {self.momentum}")
        if self.batch_size < 1:
            raise ValueError(f"optim.batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ValueError(f"optim.epochs must be >= 0, got {self.epochs}")


class SGD:
    """Momentum SGD updating named arrays in place."""

    def __init__(self, lr: float, momentum: float = 0.9, clip_norm: float | None = None):
        self.lr = lr
        self.momentum = momentum
        self.clip_norm = clip_norm
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, arrays: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        scale = 1.0
        if self.clip_norm is not None:
            total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            if total > self.clip_norm:
                scale = self.clip_norm / total
        for name in sorted(grads):
            v = self.velocity.get(name)
            g = grads[name] * scale
            v = -self.lr * g if v is None else self.momentum * v - self.lr * g
            self.velocity[name] = v
            arrays[name] += v.astype(arrays[name].dtype, copy=False)


@dataclass
class TrainResult:
    params: ModelParams
    W1: np.ndarray | None
    metrics: list[dict] = field(default_factory=list)
    timing: list[float] = field(default_factory=list)
    iterations: int = 0


def _batches(n: int, size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    return [order[i : i + size] for i in range(0, n, size)]


def _param_grads(grads, tensors: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {k: grads.get(v, np.zeros_like(v.data)) for k, v in tensors.items()}


def input_curvature(data: TripletSet) -> float:
    x = data.frames.reshape(len(data), 3, -1)
    cos = curvature_penalty(Tensor(x[:, 0]), Tensor(x[:, 1]), Tensor(x[:, 2]))
    return float(cos.data.mean())


def evaluate(
    params: ModelParams,
    data: TripletSet,
    mcfg: ModelConfig,
    W1: np.ndarray | None = None,
    dcfg: DeltaConfig | None = None,
    chunk: int = 128,
) -> dict:
    """Mean prediction error and code cosine over a dataset.

    With a delta config the error uses the inferred delta (the min over
    delta that the training objective is built on).
    """
    pt = params.tensors()
    l2, cos = [], []
    for i in range(0, len(data), chunk):
        x = data.frames[i : i + chunk].astype(params.arrays[next(iter(params.arrays))].dtype)
        if dcfg is not None:
            states = infer_delta(x, pt, W1, mcfg, dcfg)
            loss = loss_with_delta(x, pt, Tensor(W1), states.deltas, mcfg, dcfg)
        else:
            loss = loss_eq1(x, pt, mcfg)
        l2.append(loss.prediction.data)
        cos.append(loss.cosine.data)
    return {"l2_error": float(np.concatenate(l2).mean()), "curvature_code": float(np.concatenate(cos).mean())}


def train(
    mcfg: ModelConfig,
    data: TripletSet,
    optim: OptimConfig,
    seed: int = 0,
    dcfg: DeltaConfig | None = None,
    dtype=np.float64,
    eval_data: TripletSet | None = None,
    log=None,
) -> TrainResult:
    """Minimise the prediction + curvature loss (or its min-over-delta form).

    Fully determined by the arguments: the seed drives initialisation and the
    minibatch order.
    """
    if data.frame_shape != tuple(mcfg.frame_shape):
        raise ValueError(f"dataset frame shape {data.frame_shape} != model frame shape {mcfg.frame_shape}")
    rng = np.random.default_rng(seed)
    params = ModelParams.init(mcfg, rng, dtype)
    W1 = None
    if dcfg is not None:
        dcfg.validate(mcfg)
        W1 = init_w1(mcfg, dcfg, rng, dtype)
    opt = SGD(optim.lr, optim.momentum, optim.clip_norm)
    frames = data.frames.astype(dtype)
    eval_data = eval_data if eval_data is not None else data
    curv_in = input_curvature(eval_data)
    result = TrainResult(params, W1)
    for epoch in range(1, optim.epochs + 1):
        t0 = time.perf_counter()
        frac = (epoch - 1) / max(1, optim.epochs - 1)
        opt.lr = optim.lr * (1.0 + (optim.lr_end_factor - 1.0) * frac)
        for idx in _batches(len(data), optim.batch_size, rng):
            x = frames[idx]
            try:
                if dcfg is None:
                    pt = params.tensors(requires_grad=True)
                    loss = loss_eq1(x, pt, mcfg)
                    grads = _param_grads(T.backward(loss.total), pt)
                    opt.step(params.arrays, grads)
                else:
                    states = infer_delta(x, params.arrays, W1, mcfg, dcfg)
                    pt = params.tensors(requires_grad=True)
                    w1t = Tensor(W1, requires_grad=True, dtype=W1.dtype)
                    loss = loss_with_delta(x, pt, w1t, states.deltas, mcfg, dcfg)
                    g = T.backward(loss.total)
                    grads = _param_grads(g, pt)
                    grads["W1"] = g.get(w1t, np.zeros_like(W1))
                    arrays = dict(params.arrays, W1=W1)
                    opt.step(arrays, grads)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch}: {exc}") from exc
            result.iterations += 1
        for name, arr in list(params.arrays.items()) + ([("W1", W1)] if W1 is not None else []):
            if not np.isfinite(arr).all():
                raise NumericError(f"epoch {epoch}: non-finite values in {name}")
        ev = evaluate(params, eval_data, mcfg, W1, dcfg)
        row = {"epoch": epoch, "l2_error": ev["l2_error"], "curvature_input": curv_in, "curvature_code": ev["curvature_code"]}
        result.metrics.append(row)
        result.timing.append(time.perf_counter() - t0)
        if log:
            log(row)
    return result


# --- persistence ----------------------------------------------------------------


def metrics_csv(rows: list[dict]) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for r in rows:
        w.writerow([r["epoch"]] + [repr(float(r[c])) for c in METRIC_COLUMNS[1:]])
    return buf.getvalue()


def save_checkpoint(directory, mcfg: ModelConfig, result: TrainResult, seed: int, dcfg: DeltaConfig | None = None, extra: dict | None = None) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    tensors = dict(result.params.arrays)
    if result.W1 is not None:
        tensors["W1"] = result.W1
    for name, arr in tensors.items():
        if not np.isfinite(arr).all():
            raise NumericError(f"refusing to checkpoint non-finite tensor {name}")
        io.write_ltz(d / f"{name}.ltz", arr)
    manifest = {
        "schema_version": io.SCHEMA_VERSION,
        "architecture": mcfg.arch,
        "model": mcfg.to_json(),
        "a": list(mcfg.a),
        "lambda": mcfg.lam,
        "beta": mcfg.pool.beta if mcfg.pool else None,
        "seed": seed,
        "iterations": result.iterations,
        "tensors": sorted(tensors),
        "delta": dcfg.to_json() if dcfg else None,
        "w1_orientation": "code_dim x delta_dim" if dcfg else None,
    }
    if extra:
        manifest.update(extra)
    io.write_json(d / "manifest.json", manifest)


def load_checkpoint(directory):
    """Returns ``(ModelConfig, ModelParams, W1 or None, DeltaConfig or None, manifest)``."""
    d = Path(directory)
    manifest = io.read_json(d / "manifest.json")
    mcfg = ModelConfig.from_json(manifest["model"])
    arrays = {name: io.read_ltz(d / f"{name}.ltz") for name in manifest["tensors"]}
    W1 = arrays.pop("W1", None)
    dcfg = DeltaConfig(**manifest["delta"]) if manifest.get("delta") else None
    if dcfg is not None and W1 is not None and W1.shape != w1_shape(mcfg, dcfg):
        raise ValueError(f"checkpoint W1 shape {W1.shape} != expected {w1_shape(mcfg, dcfg)}")
    return mcfg, ModelParams(arrays), W1, dcfg, manifest


def code_trajectory_cosine(params: ModelParams, mcfg: ModelConfig, seqs: np.ndarray) -> np.ndarray:
    """Mean code cosine of every sequence [S, T, C, H, W] (phases for pooled models)."""
    pt = params.tensors()
    out = []
    for seq in seqs:
        z = phase_vector(encode(Tensor(seq), pt, mcfg)).data
        out.append(_mean_cosine(z))
    return np.array(out)


def _mean_cosine(z: np.ndarray, eps: float = 1e-6) -> float:
    cos = curvature_penalty(Tensor(z[:-2]), Tensor(z[1:-1]), Tensor(z[2:]), eps)
    return float(cos.data.mean())
