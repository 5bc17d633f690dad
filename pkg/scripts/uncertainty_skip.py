"""Skip-frame experiment: train deep-3 with and without the latent correction.

Reports held-out L2 for both objectives and the accuracy of a linear probe
from the inferred delta to the skip label (plus its permutation baseline).
"""

import argparse
import json
import time

import numpy as np

from linvid.datagen import SpriteSceneSpec, gen_skip_sprites
from linvid.model import preset
from linvid.train import OptimConfig, evaluate, train
from linvid.uncertainty import BASES, DeltaConfig, infer_delta, split_probe


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--train-count", type=int, default=1000)
    ap.add_argument("--test-count", type=int, default=500)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--base", choices=BASES, default="extrapolation-base")
    ap.add_argument("--alpha", type=float, default=0.1)
    ap.add_argument("--k", type=int, default=5)
    ap.add_argument("--full-code", action="store_true", help="correct magnitudes as well as phases")
    ap.add_argument("--heading", type=float, default=45.0, help="fixed motion direction in degrees; negative for random")
    ap.add_argument("--skip-plain", action="store_true", help="do not train the baseline without delta")
    ap.add_argument("--out", help="write a JSON summary here")
    args = ap.parse_args()

    spec = SpriteSceneSpec(step=20, heading=None if args.heading < 0 else args.heading)
    train_set = gen_skip_sprites(spec, args.train_count, seed=1)
    test_set = gen_skip_sprites(spec, args.test_count, seed=2)
    monitor = test_set.subset(np.arange(min(32, args.test_count)))
    mcfg = preset("deep-3")
    optim = OptimConfig(lr=0.005, batch_size=16, epochs=args.epochs, clip_norm=5.0, lr_end_factor=0.05)
    dcfg = DeltaConfig(k=args.k, alpha=args.alpha, base=args.base, phase_only=not args.full_code)

    t = time.process_time()
    r = train(mcfg, train_set, optim, seed=args.seed, dcfg=dcfg, eval_data=monitor,
              log=lambda row: print(f"epoch {row['epoch']} monitor l2 {row['l2_error']:.4f}", flush=True))
    deltas = infer_delta(test_set.frames, r.params.arrays, r.W1, mcfg, dcfg).deltas
    summary = {
        "delta": dcfg.to_json(),
        "l2_with_delta": evaluate(r.params, test_set, mcfg, r.W1, dcfg)["l2_error"],
        "probe_accuracy": split_probe(deltas, test_set.s, seed=0),
        "permutation_baseline": split_probe(deltas, test_set.s, seed=0, shuffle_labels=True),
        "delta_mean_by_label": {str(s): deltas[test_set.s == s].mean(axis=0).tolist() for s in (0, 1)},
    }
    if not args.skip_plain:
        plain = train(mcfg, train_set, optim, seed=args.seed, eval_data=monitor)
        summary["l2_without_delta"] = evaluate(plain.params, test_set, mcfg)["l2_error"]
    summary["cpu_seconds"] = time.process_time() - t
    print(json.dumps(summary, indent=2))
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(summary, fh, indent=2)


if __name__ == "__main__":
    main()
