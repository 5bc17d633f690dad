"""Command-line entry point.

Exit codes: 0 ok, 2 config error, 3 numeric failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import io
from . import tensor as T
from .datagen import IngestError, TripletSet, build_dataset, load_dataset, save_dataset
from .evaluate import DEFAULT_TAUS, conv_filters, filter_group_size, interpolate, measure_curvature, tile_filters
from .gradcheck import run_suite
from .model import ModelConfig, preset
from .phase_pool import PoolSpec
from .tensor import NumericError
from .train import OptimConfig, load_checkpoint, metrics_csv, save_checkpoint, train
from .uncertainty import DeltaConfig, infer_delta, split_probe, write_delta_csv

log = logging.getLogger("linvid")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


# --- config parsing -------------------------------------------------------------


def _model_config(d: dict) -> ModelConfig:
    d = dict(d)
    arch = d.pop("arch", None)
    if arch is None:
        raise ConfigError("model.arch: missing")
    if "pool" in d and d["pool"] is not None:
        d["pool"] = PoolSpec.from_json(d["pool"])
    for key in ("frame_shape", "kernel", "enc_channels", "dec_channels", "pool_grid", "a"):
        if d.get(key) is not None:
            d[key] = tuple(d[key])
    known = {f.name for f in fields(ModelConfig)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"model: unknown fields {sorted(unknown)}")
    return preset(arch, **d)


def _dataclass_from(cls, d: dict | None, section: str):
    d = dict(d or {})
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"{section}: unknown fields {sorted(unknown)}")
    return cls(**d)


def parse_run_config(cfg: dict) -> dict:
    """Validated pieces of a run config; raises ConfigError/ValueError with field names."""
    if not isinstance(cfg, dict):
        raise ConfigError("config: top level must be a JSON object")
    if "model" not in cfg:
        raise ConfigError("model: missing section")
    if "dataset" not in cfg:
        raise ConfigError("dataset: missing section")
    mcfg = _model_config(cfg["model"])
    optim = _dataclass_from(OptimConfig, cfg.get("optim"), "optim")
    dcfg = _dataclass_from(DeltaConfig, cfg["delta"], "delta") if cfg.get("delta") else None
    if dcfg is not None:
        dcfg.validate(mcfg)
    return {"model": mcfg, "optim": optim, "delta": dcfg}


def _read_config(path) -> dict:
    if path is None:
        return {}
    try:
        return io.read_json(path)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: {path} is not valid JSON ({exc})") from exc


def _dataset(desc, seed: int | None = None) -> TripletSet:
    if isinstance(desc, str):
        return load_dataset(desc)
    desc = dict(desc)
    if seed is not None and "path" not in desc:
        desc["seed"] = seed
    return build_dataset(desc)


def _dtype(precision: str):
    return np.float32 if precision == "f32" else np.float64


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --- commands -------------------------------------------------------------------


def cmd_gen(args) -> int:
    cfg = _read_config(args.config)
    desc = cfg.get("dataset", cfg)
    if not desc:
        raise ConfigError("dataset: missing generator description")
    data = _dataset(desc, args.seed)
    save_dataset(_out(args), data, previews=args.previews)
    print(f"wrote {len(data)} triplets to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _read_config(args.config)
    run = parse_run_config(cfg)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    data = _dataset(cfg["dataset"])
    eval_data = _dataset(cfg["eval_dataset"]) if cfg.get("eval_dataset") else None
    out = _out(args)
    result = train(
        run["model"], data, run["optim"], seed=seed, dcfg=run["delta"], dtype=_dtype(args.precision),
        eval_data=eval_data, log=lambda row: log.info("epoch %d l2 %.5f", row["epoch"], row["l2_error"]),
    )
    extra = {"optim": cfg.get("optim", {}), "precision": args.precision}
    if run["delta"] is not None:
        extra.update(k=run["delta"].k, alpha=run["delta"].alpha)
    save_checkpoint(out / "checkpoint", run["model"], result, seed, run["delta"], extra)
    (out / "metrics.csv").write_text(metrics_csv(result.metrics))
    io.write_json(out / "config.json", dict(cfg, seed=seed))
    if result.metrics:
        print(f"final l2_error {result.metrics[-1]['l2_error']:.6f}")
    return EXIT_OK


def _frame(path, mcfg: ModelConfig) -> np.ndarray:
    img = io.read_pgm(path)
    return img.reshape(mcfg.frame_shape) if img.size == int(np.prod(mcfg.frame_shape)) else img[None]


def cmd_interpolate(args) -> int:
    mcfg, params, _, _, _ = load_checkpoint(args.checkpoint)
    if args.frames:
        f1, f2 = (_frame(p, mcfg) for p in args.frames)
    elif args.dataset:
        data = load_dataset(args.dataset)
        f1, f2 = data.frames[args.index, 0], data.frames[args.index, 1]
    else:
        raise ConfigError("interpolate: give --frames A B or --dataset DIR")
    taus = [float(t) for t in args.taus.split(",")] if args.taus else list(DEFAULT_TAUS)
    images = interpolate(f1.astype(np.float64), f2.astype(np.float64), params, mcfg, taus, args.mode)
    out = _out(args)
    files = []
    for tau, img in zip(taus, images):
        name = f"tau_{tau:+.2f}.pgm"
        io.write_pgm(out / name, img.reshape(-1, img.shape[-1]))
        files.append({"tau": tau, "file": name})
    io.write_json(out / "manifest.json", {
        "schema_version": io.SCHEMA_VERSION, "checkpoint": str(args.checkpoint), "mode": args.mode, "images": files,
    })
    print(f"wrote {len(files)} images to {out}")
    return EXIT_OK


def cmd_curvature(args) -> int:
    mcfg, params, _, _, _ = load_checkpoint(args.checkpoint)
    data = _dataset(args.dataset) if Path(args.dataset).is_dir() else _dataset(_read_config(args.dataset)["dataset"])
    report = measure_curvature(params, mcfg, data)
    print(json.dumps(report, sort_keys=True))
    if args.out:
        io.write_json(_out(args) / "curvature.json", report)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    try:
        reports = run_suite(args.scope, trials=args.trials, seed=args.seed or 0)
    except KeyError:
        raise ConfigError(f"gradcheck: unknown op {args.scope!r}") from None
    for r in reports:
        print(r)
    return EXIT_OK if all(r.passed for r in reports) else EXIT_NUMERIC


def cmd_viz(args) -> int:
    mcfg, params, _, _, _ = load_checkpoint(args.checkpoint)
    group = filter_group_size(mcfg)
    out = _out(args)
    for name, filters in conv_filters(params, mcfg).items():
        io.write_pgm(out / f"{name}_filters.pgm", tile_filters(filters, group))
        print(f"{name}: {len(filters)} filters, {group} per row")
    return EXIT_OK


def cmd_probe(args) -> int:
    mcfg, params, W1, dcfg, manifest = load_checkpoint(args.checkpoint)
    if dcfg is None or W1 is None:
        raise ConfigError("probe: checkpoint was not trained with a delta config")
    data = _dataset(args.dataset) if Path(args.dataset).is_dir() else _dataset(_read_config(args.dataset)["dataset"])
    if data.s is None:
        raise ConfigError("probe: dataset carries no skip labels")
    batch = infer_delta(data.frames.astype(np.float64), params.arrays, W1, mcfg, dcfg)
    seed = args.seed or 0
    report = {
        "accuracy": split_probe(batch.deltas, data.s, seed),
        "permutation_baseline": split_probe(batch.deltas, data.s, seed, shuffle_labels=True),
        "count": len(data),
        "k": dcfg.k,
        "alpha": dcfg.alpha,
    }
    print(json.dumps(report, sort_keys=True))
    if args.out:
        out = _out(args)
        io.write_json(out / "probe.json", report)
        write_delta_csv(out / "deltas.csv", batch)
    return EXIT_OK


# --- wiring ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    def flags(suppress: bool) -> argparse.ArgumentParser:
        # global flags may come before or after the subcommand; the
        # subcommand copy must not overwrite a value given before it
        d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
        f = argparse.ArgumentParser(add_help=False)
        f.add_argument("--config", default=d(None), help="JSON config path")
        f.add_argument("--seed", type=int, default=d(None))
        f.add_argument("--out", default=d(None), help="output directory")
        f.add_argument("--precision", choices=("f32", "f64"), default=d("f64"))
        f.add_argument("-v", "--verbose", action="store_true", default=d(False))
        return f

    common = flags(suppress=True)
    p = argparse.ArgumentParser(prog="linvid", parents=[flags(suppress=False)])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="generate a dataset")
    g.add_argument("--previews", type=int, default=4)
    g.set_defaults(fn=cmd_gen, needs_out=True)

    t = sub.add_parser("train", parents=[common], help="train a model")
    t.set_defaults(fn=cmd_train, needs_out=True)

    i = sub.add_parser("interpolate", parents=[common], help="decode codes along a line")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--frames", nargs=2, metavar=("A", "B"))
    i.add_argument("--dataset")
    i.add_argument("--index", type=int, default=0)
    i.add_argument("--taus", help="comma-separated, default 0,0.5,...,3")
    i.add_argument("--mode", choices=("linear", "mean-magnitude"), default="linear")
    i.set_defaults(fn=cmd_interpolate, needs_out=True)

    c = sub.add_parser("curvature", parents=[common], help="input vs code mean cosine")
    c.add_argument("--checkpoint", required=True)
    c.add_argument("--dataset", required=True, help="dataset dir or config with a dataset section")
    c.set_defaults(fn=cmd_curvature, needs_out=False)

    gc = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    gc.add_argument("--scope", default="all")
    gc.add_argument("--trials", type=int, default=100)
    gc.set_defaults(fn=cmd_gradcheck, needs_out=False)

    v = sub.add_parser("viz", parents=[common], help="tile convolution filters")
    v.add_argument("--checkpoint", required=True)
    v.set_defaults(fn=cmd_viz, needs_out=True)

    pr = sub.add_parser("probe", parents=[common], help="linear probe from delta to the skip label")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--dataset", required=True, help="dataset dir or config with a dataset section")
    pr.set_defaults(fn=cmd_probe, needs_out=False)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.needs_out and not args.out:
        print(f"error: {args.command} needs --out", file=sys.stderr)
        return EXIT_CONFIG
    T.set_default_dtype(_dtype(args.precision))
    try:
        return args.fn(args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (io.FormatError, IngestError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, ValueError, KeyError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    finally:
        T.set_default_dtype(np.float64)


if __name__ == "__main__":
    sys.exit(main())
