import csv
import json

import numpy as np
import pytest

from linvid import io
from linvid.cli import main

SPRITES = {"generator": "sprites", "count": 24, "seed": 3, "spec": {"step": 20}}
SKIP = {"generator": "skip-sprites", "count": 24, "seed": 4, "spec": {"step": 20}}


def _config(tmp_path, name="run.json", **over):
    cfg = {"model": {"arch": "shallow-1"}, "dataset": SPRITES, "optim": {"lr": 0.01, "epochs": 2, "batch_size": 8}, "seed": 0}
    cfg.update(over)
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    d = tmp_path_factory.mktemp("run")
    assert main(["train", "--config", str(_config(d)), "--out", str(d / "out")]) == 0
    return d / "out"


def test_gen_writes_dataset_and_previews(tmp_path):
    cfg = tmp_path / "gen.json"
    cfg.write_text(json.dumps({"dataset": SPRITES}))
    assert main(["--config", str(cfg), "gen", "--out", str(tmp_path / "d"), "--previews", "2"]) == 0
    m = io.read_json(tmp_path / "d" / "manifest.json")
    assert m["count"] == 24 and m["generator"] == "sprites"
    assert io.read_ltz(tmp_path / "d" / "frames.ltz").shape == (24, 3, 1, 16, 16)
    assert len(list((tmp_path / "d").glob("*.pgm"))) == 6
    assert io.read_json(tmp_path / "d" / "manifest.json")["seed"] == 3


def test_global_flags_after_subcommand(tmp_path):
    cfg = tmp_path / "gen.json"
    cfg.write_text(json.dumps(SPRITES))
    assert main(["gen", "--config", str(cfg), "--seed", "9", "--out", str(tmp_path / "d")]) == 0
    assert io.read_json(tmp_path / "d" / "manifest.json")["seed"] == 9


def test_train_outputs(trained):
    ck = trained / "checkpoint"
    m = io.read_json(ck / "manifest.json")
    assert m["architecture"] == "shallow-1" and m["seed"] == 0 and m["precision"] == "f64"
    assert m["a"] == [2.0, -1.0] and m["lambda"] == pytest.approx(0.1)
    rows = list(csv.DictReader((trained / "metrics.csv").open()))
    assert [int(r["epoch"]) for r in rows] == [1, 2]
    assert set(rows[0]) == {"epoch", "l2_error", "curvature_input", "curvature_code"}


def test_train_is_byte_reproducible(tmp_path, trained):
    assert main(["train", "--config", str(_config(tmp_path)), "--out", str(tmp_path / "again")]) == 0
    for f in sorted((trained / "checkpoint").iterdir()):
        assert f.read_bytes() == (tmp_path / "again" / "checkpoint" / f.name).read_bytes(), f.name
    assert (trained / "metrics.csv").read_bytes() == (tmp_path / "again" / "metrics.csv").read_bytes()


def test_zero_epochs_saves_initial_weights(tmp_path):
    cfg = _config(tmp_path, optim={"epochs": 0})
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    m = io.read_json(tmp_path / "o" / "checkpoint" / "manifest.json")
    assert m["iterations"] == 0
    assert (tmp_path / "o" / "metrics.csv").read_text().strip().count("\n") == 0


def test_f32_precision(tmp_path):
    cfg = _config(tmp_path, optim={"epochs": 1, "batch_size": 8})
    assert main(["train", "--precision", "f32", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert io.read_json(tmp_path / "o" / "checkpoint" / "manifest.json")["precision"] == "f32"
    # LTZ stores f32 on disk whatever the training precision
    raw = (tmp_path / "o" / "checkpoint" / "enc.conv.w.ltz").read_bytes()
    assert len(raw) == 4 + 4 + 4 * 4 + 4 * 8 * 1 * 5 * 5


def test_interpolate_from_frames(tmp_path, trained):
    rng = np.random.default_rng(0)
    for name in ("a", "b"):
        io.write_pgm(tmp_path / f"{name}.pgm", rng.uniform(0, 1, (16, 16)))
    args = ["interpolate", "--checkpoint", str(trained / "checkpoint"), "--frames", str(tmp_path / "a.pgm"), str(tmp_path / "b.pgm")]
    assert main(args + ["--out", str(tmp_path / "i1")]) == 0
    assert main(args + ["--out", str(tmp_path / "i2")]) == 0
    imgs = sorted(p.name for p in (tmp_path / "i1").glob("*.pgm"))
    assert len(imgs) == 7 and "tau_+1.50.pgm" in imgs
    for n in imgs:
        assert (tmp_path / "i1" / n).read_bytes() == (tmp_path / "i2" / n).read_bytes()
    assert [e["tau"] for e in io.read_json(tmp_path / "i1" / "manifest.json")["images"]] == [0, 0.5, 1, 1.5, 2, 2.5, 3]


def test_interpolate_needs_frames(tmp_path, trained):
    assert main(["interpolate", "--checkpoint", str(trained / "checkpoint"), "--out", str(tmp_path)]) == 2


def test_curvature_and_viz(tmp_path, trained, capsys):
    cfg = _config(tmp_path)
    assert main(["curvature", "--checkpoint", str(trained / "checkpoint"), "--dataset", str(cfg), "--out", str(tmp_path / "c")]) == 0
    report = io.read_json(tmp_path / "c" / "curvature.json")
    assert set(report) == {"input_cosine", "code_cosine", "count"}
    assert main(["viz", "--checkpoint", str(trained / "checkpoint"), "--out", str(tmp_path / "v")]) == 0
    assert io.read_pgm(tmp_path / "v" / "encoder_filters.pgm").shape == (2 * 5 + 3, 4 * 5 + 5)


def test_probe_roundtrip(tmp_path):
    cfg = _config(
        tmp_path, model={"arch": "deep-3"}, dataset=SKIP, optim={"epochs": 1, "batch_size": 8},
        delta={"k": 2, "alpha": 0.1, "base": "extrapolation-base"},
    )
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    m = io.read_json(tmp_path / "o" / "checkpoint" / "manifest.json")
    assert m["k"] == 2 and m["alpha"] == 0.1 and m["delta"]["base"] == "extrapolation-base"
    assert main(["probe", "--checkpoint", str(tmp_path / "o" / "checkpoint"), "--dataset", str(cfg), "--out", str(tmp_path / "p")]) == 0
    rep = io.read_json(tmp_path / "p" / "probe.json")
    assert 0 <= rep["accuracy"] <= 1 and rep["count"] == 24
    rows = list(csv.reader((tmp_path / "p" / "deltas.csv").open()))
    assert len(rows) == 1 + 24 * 3


def test_probe_without_delta_is_config_error(tmp_path, trained):
    cfg = _config(tmp_path, dataset=SKIP)
    assert main(["probe", "--checkpoint", str(trained / "checkpoint"), "--dataset", str(cfg)]) == 2


@pytest.mark.parametrize(
    "cfg",
    [
        {"dataset": SPRITES},
        {"model": {"arch": "deep-9"}, "dataset": SPRITES},
        {"model": {"arch": "deep-2", "colour": 1}, "dataset": SPRITES},
        {"model": {"arch": "deep-2"}, "dataset": SPRITES, "optim": {"lr": -1}},
        {"model": {"arch": "deep-3"}, "dataset": SPRITES, "delta": {"dim": 64}},
    ],
)
def test_config_errors_exit_2(tmp_path, cfg):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(cfg))
    assert main(["train", "--config", str(p), "--out", str(tmp_path / "o")]) == 2


def test_invalid_json_and_flags(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{model: ")
    assert main(["train", "--config", str(p), "--out", str(tmp_path)]) == 2
    assert main(["train", "--precision", "f16", "--out", str(tmp_path)]) == 2
    assert main(["train", "--config", str(_config(tmp_path))]) == 2  # no --out


def test_io_errors_exit_4(tmp_path):
    assert main(["train", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 4
    assert main(["viz", "--checkpoint", str(tmp_path / "nowhere"), "--out", str(tmp_path / "v")]) == 4
    (tmp_path / "frames").mkdir()
    (tmp_path / "frames" / "x.pgm").write_bytes(b"garbage")
    cfg = _config(tmp_path, dataset={"generator": "ingest", "spec": {"directory": str(tmp_path / "frames")}})
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 4


def test_numeric_failure_exits_3(tmp_path):
    cfg = _config(tmp_path, optim={"lr": 1e30, "epochs": 1, "batch_size": 8})
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3


def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--scope", "relu", "--trials", "3"]) == 0
    assert capsys.readouterr().out.startswith("PASS relu")
    assert main(["gradcheck", "--scope", "nope"]) == 2
