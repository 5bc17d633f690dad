"""Held-out L2 prediction error of deep-1, deep-2 and deep-3 on rotating sprites.

Equal budgets for every architecture; prints one line per run and the
per-architecture median.
"""

import argparse
import csv
import sys
import time

import numpy as np

from linvid.datagen import SpriteSceneSpec, gen_rotating_sprites
from linvid.model import preset
from linvid.train import OptimConfig, train


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--archs", default="deep-1,deep-2,deep-3")
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--train-count", type=int, default=500)
    ap.add_argument("--test-count", type=int, default=200)
    ap.add_argument("--epochs", type=int, default=40)
    ap.add_argument("--lr", type=float, default=0.005)
    ap.add_argument("--lr-end-factor", type=float, default=0.05)
    ap.add_argument("--step", type=float, default=20.0, help="sprite rotation per frame, degrees")
    ap.add_argument("--out", help="CSV of every run")
    args = ap.parse_args()

    spec = SpriteSceneSpec(step=args.step)
    train_set = gen_rotating_sprites(spec, args.train_count, seed=1)
    test_set = gen_rotating_sprites(spec, args.test_count, seed=2)
    optim = OptimConfig(lr=args.lr, batch_size=16, epochs=args.epochs, clip_norm=5.0, lr_end_factor=args.lr_end_factor)
    rows = []
    for arch in args.archs.split(","):
        for seed in (int(s) for s in args.seeds.split(",")):
            t = time.process_time()
            r = train(preset(arch), train_set, optim, seed=seed, eval_data=test_set)
            rows.append({"arch": arch, "seed": seed, "l2_error": r.metrics[-1]["l2_error"], "cpu_seconds": time.process_time() - t})
            print(rows[-1], flush=True)
    for arch in args.archs.split(","):
        print(f"{arch}: median L2 {np.median([r['l2_error'] for r in rows if r['arch'] == arch]):.4f}")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)


if __name__ == "__main__":
    sys.exit(main())
