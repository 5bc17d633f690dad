"""Central finite-difference checks of analytic gradients.

Each registered case maps a seeded generator to ``(fn, inputs)``; the check
projects the op output onto fixed random weights to get a scalar, then
compares backward() against central differences coordinate by coordinate.
Large inputs are checked on a seeded subset of coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .tensor import Tensor

REL_FLOOR = 1e-8
STEP = 1e-5


@dataclass
class GradCheckReport:
    op: str
    max_rel_error: float
    worst_index: tuple
    trials: int
    kinks_skipped: int = 0
    coords_checked: int = 0

    @property
    def passed(self) -> bool:
        return self.max_rel_error < 1e-4

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.op:<18} trials={self.trials:<4d} max_rel_err={self.max_rel_error:.3e} at {self.worst_index} kinks_skipped={self.kinks_skipped}/{self.coords_checked}"


def rel_error(analytic, numeric, floor: float = REL_FLOOR) -> np.ndarray:
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def _scalarize(fn, weights_rng):
    cache = {}

    def f(*xs):
        out = fn(*xs)
        if out.size == 1:
            return T.reshape(out, ())
        if "w" not in cache:
            cache["w"] = weights_rng.uniform(0.5, 1.5, size=out.shape) * weights_rng.choice([-1.0, 1.0], size=out.shape)
        return T.sum(out * Tensor(cache["w"]))

    return f


def _kinked(central: float, fine: float, tol: float = 1e-4) -> bool:
    """True when central differences at ``step`` and ``step / 10`` disagree.

    A smooth function gives the same value at both steps up to O(step^2);
    a relu, clamp or unpool kink inside the wide stencil does not. A wrong
    analytic gradient still fails, because both differences agree with
    each other and not with it.
    """
    return abs(central - fine) > tol * max(abs(central), abs(fine), REL_FLOOR)


def _pick_coords(sizes: list[int], rng: np.random.Generator, budget: int) -> list[tuple[int, int]]:
    total = sum(sizes)
    if total <= budget:
        return [(k, j) for k, n in enumerate(sizes) for j in range(n)]
    picks = []
    for k, n in enumerate(sizes):
        share = max(2, round(budget * n / total))
        picks += [(k, int(j)) for j in rng.choice(n, size=min(n, share), replace=False)]
    return picks


def _central(f, inputs: list[np.ndarray], k: int, j: int, step: float) -> float:
    x = inputs[k]
    plus, minus = x.copy().reshape(-1), x.copy().reshape(-1)
    plus[j] += step
    minus[j] -= step
    args_p = [Tensor(plus.reshape(x.shape)) if i == k else Tensor(v) for i, v in enumerate(inputs)]
    args_m = [Tensor(minus.reshape(x.shape)) if i == k else Tensor(v) for i, v in enumerate(inputs)]
    return (f(*args_p).item() - f(*args_m).item()) / (2 * step)


def check_once(fn: Callable, inputs: list[np.ndarray], rng: np.random.Generator, max_coords: int = 24, step: float = STEP):
    """Worst relative error, its (input, flat index) and the kink-skip count for one instance."""
    f = _scalarize(fn, rng)
    leaves = [Tensor(x, requires_grad=True) for x in inputs]
    grads = T.backward(f(*leaves))
    analytic = [grads.get(leaves[k], np.zeros_like(x)).reshape(-1) for k, x in enumerate(inputs)]
    worst, where, skipped = 0.0, (), 0
    for k, j in _pick_coords([x.size for x in inputs], rng, max_coords):
        numeric = _central(f, inputs, k, j, step)
        err = float(rel_error(analytic[k][j], numeric))
        if err >= 1e-4 and _kinked(numeric, _central(f, inputs, k, j, step / 10)):
            skipped += 1
            continue
        if err > worst:
            worst, where = err, (k, int(j))
    return worst, where, skipped


def grad_check(name: str, case: Callable[[np.random.Generator], tuple], trials: int = 100, seed: int = 0, max_coords: int = 24) -> GradCheckReport:
    """Run ``trials`` seeded instances of ``case`` and report the worst error."""
    if trials < 1:
        raise ValueError("grad_check: trials must be >= 1")
    worst, where, skipped, checked = 0.0, (), 0, 0
    for trial in range(trials):
        rng = np.random.default_rng([seed, trial])
        fn, inputs = case(rng)
        inputs = [np.asarray(x, dtype=np.float64) for x in inputs]
        err, idx, skip = check_once(fn, inputs, rng, max_coords)
        skipped += skip
        checked += len(_pick_coords([x.size for x in inputs], np.random.default_rng(0), max_coords))
        if err > worst:
            worst, where = err, (trial,) + idx
    return GradCheckReport(name, worst, where, trials, skipped, checked)


# --- registered cases -----------------------------------------------------------


def _away_from(rng, shape, lo=-1.0, hi=1.0, gap=1e-3, kinks=(0.0,)):
    x = rng.uniform(lo, hi, size=shape)
    for k in kinks:
        near = np.abs(x - k) < gap
        x[near] = k + np.sign(x[near] - k + 1e-300) * gap * (1 + rng.random(near.sum()))
    return x


def _relu_case(rng):
    return T.relu, [_away_from(rng, (3, 5))]


def _conv_case(rng):
    c, o, k = rng.integers(1, 4), rng.integers(1, 4), rng.integers(1, 4)
    pad = int(rng.integers(0, 2))
    x = rng.standard_normal((2, c, 6, 6))
    w = rng.standard_normal((o, c, k, k))
    b = rng.standard_normal(o)
    return (lambda x, w, b: T.conv2d(x, w, pad, b)), [x, w, b]


def _fc_case(rng):
    n, m = rng.integers(2, 9), rng.integers(2, 9)
    return T.linear, [rng.standard_normal((3, n)), rng.standard_normal((m, n)), rng.standard_normal(m)]


def _pool_input(rng):
    from .phase_pool import PoolSpec

    spec = PoolSpec((2, 2, 3), (1, 2, 3) if rng.random() < 0.5 else (2, 2, 3), beta=5.0)
    z = rng.uniform(0.05, 1.0, size=(2, 4, 4, 6))
    return spec, z


def _soft_max_case(rng):
    from .phase_pool import soft_max_pool

    spec, z = _pool_input(rng)
    return (lambda z: soft_max_pool(z, spec)), [z]


def _soft_argmax_case(rng):
    from .phase_pool import soft_argmax_pool

    spec, z = _pool_input(rng)
    return (lambda z: soft_argmax_pool(z, spec)), [z]


def _unpool_case(rng):
    from .phase_pool import Code, PoolSpec, unpool

    spec = PoolSpec((2, 3, 4), (1, 3, 4) if rng.random() < 0.5 else (2, 3, 4))
    in_shape = (4, 6, 8)
    grid = spec.grid_shape(in_shape)
    m = rng.uniform(0.1, 1.0, size=(2,) + grid)
    # keep phases away from interpolation kinks (grid points)
    p = np.empty((2, 3) + grid)
    for a, g in enumerate(spec.group):
        u = rng.uniform(0, g - 1, size=p[:, a].shape)
        frac = u - np.floor(u)
        u = np.floor(u) + np.clip(frac, 0.05, 0.95)
        p[:, a] = 2 * u / (g - 1) - 1
    return (lambda m, p: unpool(Code(m, p, spec, in_shape))), [m, p]


def _curvature_case(rng):
    from .model import curvature_penalty

    zs = [rng.standard_normal((3, 5)) for _ in range(3)]
    return (lambda a, b, c: curvature_penalty(a, b, c)), zs


def _tiny_model(rng, arch):
    from .model import ModelParams, param_shapes, preset
    from .phase_pool import PoolSpec

    if arch == "shallow-1":
        cfg = preset(arch, frame_shape=(1, 6, 6), kernel=(3, 3), enc_channels=(4,), pool=PoolSpec((2, 2, 2)))
    elif arch == "deep-3":
        # 6x6 keeps the loss small enough that roundoff stays far below the
        # smallest gradient entries at step 1e-5
        cfg = preset(arch, frame_shape=(1, 6, 6), kernel=(3, 3), enc_channels=(2, 2), code_dim=8,
                     dec_channels=(2, 2), pool_grid=(2, 2, 2), pool=PoolSpec((1, 2, 2)))
    else:
        cfg = preset(arch, frame_shape=(1, 8, 8), kernel=(3, 3), enc_channels=(2, 2), code_dim=6,
                     dec_channels=(2, 2), lam=0.1)
    params = ModelParams.init(cfg, rng)
    # positive biases keep relu units away from their kink
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".b"):
            params.arrays[name] = rng.uniform(0.1, 0.3, size=shape)
    return cfg, params


def _loss_case(arch):
    def case(rng):
        from .model import loss_eq1

        cfg, params = _tiny_model(rng, arch)
        names = sorted(params.arrays)
        frames = rng.uniform(0, 1, size=(2, 3) + cfg.frame_shape)

        def fn(*ws):
            return loss_eq1(frames, dict(zip(names, ws)), cfg).total

        return fn, [params.arrays[n] for n in names]

    return case


def _corrected_code_case(rng):
    from .uncertainty import corrected_code

    base = "as-written" if rng.random() < 0.5 else "extrapolation-base"
    d, k = 8, 2
    return (lambda zt, ztm1, delta, w1: corrected_code(zt, ztm1, delta, w1, (2.0, -1.0), base)), [
        rng.standard_normal((3, d)), rng.standard_normal((3, d)), rng.standard_normal((3, k)), rng.standard_normal((d, k)),
    ]


def _delta_loss_case(rng):
    from .uncertainty import DeltaConfig, init_w1, loss_with_delta

    cfg, params = _tiny_model(rng, "deep-2")
    dcfg = DeltaConfig(dim=1, k=2, phase_only=False, base="extrapolation-base")
    names = sorted(params.arrays)
    frames = rng.uniform(0, 1, size=(2, 3) + cfg.frame_shape)
    delta = rng.standard_normal((2, 1)) * 0.1
    w1 = init_w1(cfg, dcfg, rng)

    def fn(w1, *ws):
        return loss_with_delta(frames, dict(zip(names, ws)), w1, delta, cfg, dcfg).total

    return fn, [w1] + [params.arrays[n] for n in names]


CASES: dict[str, Callable] = {
    "relu": _relu_case,
    "conv2d": _conv_case,
    "fc": _fc_case,
    "soft_max_pool": _soft_max_case,
    "soft_argmax_pool": _soft_argmax_case,
    "unpool": _unpool_case,
    "curvature_penalty": _curvature_case,
    "loss_eq1": _loss_case("deep-2"),
    "loss_eq1_shallow": _loss_case("shallow-1"),
    "loss_eq1_deep3": _loss_case("deep-3"),
    "corrected_code": _corrected_code_case,
    "loss_with_delta": _delta_loss_case,
}


def run_suite(scope: str = "all", trials: int = 100, seed: int = 0) -> list[GradCheckReport]:
    if scope != "all" and scope not in CASES:
        raise KeyError(scope)
    names = list(CASES) if scope == "all" else [scope]
    return [grad_check(n, CASES[n], trials, seed) for n in names]
