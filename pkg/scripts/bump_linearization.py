"""Train shallow-1 on constant-speed bump sequences and compare curvature.

Prints, per seed, the mean cosine of held-out trajectories in pixel space and
in phase space, and the worst per-sequence R^2 of a linear phase-vs-time fit.
"""

import argparse
import json
import time

import numpy as np

from linvid.datagen import BumpSpec, bump_sequences, bump_triplets
from linvid.model import ModelConfig, encode, phase_vector
from linvid.phase_pool import PoolSpec
from linvid.tensor import Tensor
from linvid.train import OptimConfig, _mean_cosine, code_trajectory_cosine, train


def phase_r2(p: np.ndarray) -> float:
    t = np.arange(len(p), dtype=float)
    A = np.c_[t, np.ones_like(t)]
    coef = np.linalg.lstsq(A, p, rcond=None)[0]
    ss_tot = float(((p - p.mean(axis=0)) ** 2).sum())
    return 1.0 - float(((p - A @ coef) ** 2).sum()) / ss_tot if ss_tot > 0 else 1.0


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--beta", type=float, default=5.0)
    ap.add_argument("--lam", type=float, default=0.1)
    ap.add_argument("--lr", type=float, default=0.01)
    ap.add_argument("--out", help="write a JSON summary here")
    args = ap.parse_args()

    spec = BumpSpec(n_pixels=16, sigma=1.0, speed=(0.5, 1.0), n_frames=8, margin=2.0)
    mcfg = ModelConfig("shallow-1", (1, 1, 16), (1, 5), (8,), 0, (0, 0), PoolSpec((4, 1, 12), beta=args.beta), lam=args.lam)
    data = bump_triplets(spec, 60, seed=1)
    held_out, _ = bump_sequences(spec, 30, seed=99)
    input_cos = float(np.mean([_mean_cosine(s.reshape(len(s), -1)) for s in held_out]))
    rows = []
    for seed in (int(s) for s in args.seeds.split(",")):
        t = time.process_time()
        r = train(mcfg, data, OptimConfig(lr=args.lr, batch_size=16, epochs=args.epochs), seed=seed)
        pt = r.params.tensors()
        r2 = [phase_r2(phase_vector(encode(Tensor(s), pt, mcfg)).data) for s in held_out]
        row = {
            "seed": seed,
            "input_cosine": input_cos,
            "code_cosine": float(code_trajectory_cosine(r.params, mcfg, held_out).mean()),
            "r2_min": min(r2),
            "r2_median": float(np.median(r2)),
            "final_l2": r.metrics[-1]["l2_error"] if r.metrics else None,
            "cpu_seconds": time.process_time() - t,
        }
        rows.append(row)
        print(json.dumps(row))
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
