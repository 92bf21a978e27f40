import json

import numpy as np
import pytest

from aeroop import cli
from aeroop import data as D
from aeroop import training as TR

SMALL = {
    "seed": 3,
    "hours": 60,
    "data": {"n_train": 8, "n_val": 2},
    "model": {"flavor": "CoNO", "width": 4, "modes": 3, "n_layers": 3, "projection_hidden": 8},
    "train": {"epochs": 2, "n_rollout": 2, "batch_size": 4, "checkpoint_every": 1},
}


def write_config(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = write_config(root, SMALL)
    data = str(root / "data.gsf")
    assert cli.main(["gen-data", "--config", cfg, "--out", data]) == 0
    assert cli.main(["train", "--config", cfg, "--data", data, "--out", str(root / "run"), "--quiet"]) == 0
    return root, cfg, data


def test_gen_data_output(pipeline, capsys):
    root, cfg, _ = pipeline
    out = str(root / "again.gsf")
    assert cli.main(["gen-data", "--config", cfg, "--out", out]) == 0
    text = capsys.readouterr().out
    assert "T=60 H=32 W=32" in text and "sha256" in text
    assert (root / "again.gsf").read_bytes() == (root / "data.gsf").read_bytes()


def test_train_outputs(pipeline):
    root, _, _ = pipeline
    run = root / "run"
    assert (run / "final.aoc").exists() and (run / "epoch_0001.aoc").exists()
    lines = (run / "loss.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_loss" and len(lines) == 3
    ck = TR.load_checkpoint(run / "final.aoc")
    assert ck.epoch == 2 and ck.normalizer is not None


def test_train_deterministic(pipeline):
    root, cfg, data = pipeline
    assert cli.main(["train", "--config", cfg, "--data", data, "--out", str(root / "run2"), "--quiet"]) == 0
    assert (root / "run" / "final.aoc").read_bytes() == (root / "run2" / "final.aoc").read_bytes()


def test_resume_matches(pipeline):
    root, cfg, data = pipeline
    rc = cli.main(["train", "--config", cfg, "--data", data, "--out", str(root / "resumed"), "--quiet",
                   "--resume", str(root / "run" / "epoch_0001.aoc")])
    assert rc == 0
    assert (root / "run" / "final.aoc").read_bytes() == (root / "resumed" / "final.aoc").read_bytes()


def test_eval_forecast_report(pipeline, capsys):
    root, _, data = pipeline
    ck = str(root / "run" / "final.aoc")
    ev = root / "eval"
    assert cli.main(["eval", "--checkpoint", ck, "--data", data, "--horizon", "4", "--out", str(ev)]) == 0
    assert "CoNOAir(2)" in capsys.readouterr().out
    assert {"metrics_h1.csv", "metrics_h4.csv", "evolution_CoNOAir(2).csv", "onestep.gsf", "manifest.json"} <= {
        p.name for p in ev.iterdir()
    }
    cell = (ev / "metrics_h1.csv").read_text().splitlines()[1].split(",")[1]
    assert cell.count("(") == 1 and cell.endswith(")")

    fc = root / "fc.gsf"
    assert cli.main(["forecast", "--checkpoint", ck, "--history", data, "--steps", "3", "--out", str(fc)]) == 0
    pred, hist = D.load_gsf(fc), D.load_gsf(data)
    assert pred.shape == (3, 32, 32)
    assert pred.timestamps.tolist() == [hist.timestamps[-1] + 3600 * i for i in (1, 2, 3)]

    rep = root / "report"
    rc = cli.main(["report", "--eval-dir", str(ev), "--points", "3,4;10,10", "--out", str(rep), "--top", "2"])
    assert rc == 0
    names = {p.name for p in rep.iterdir()}
    assert {"point_3_4.csv", "point_10_10.csv", "event01_truth.pgm", "event02_abserr.pgm", "events.csv"} <= names


def test_usage_errors(tmp_path, pipeline):
    _, _, data = pipeline
    assert cli.main(["train", "--config", write_config(tmp_path, {"mystery": 1}), "--data", data,
                     "--out", str(tmp_path / "x")]) == 1
    bad_model = dict(SMALL, model={"flavour": "FNO"})
    assert cli.main(["train", "--config", write_config(tmp_path, bad_model), "--data", data,
                     "--out", str(tmp_path / "x")]) == 1
    with pytest.raises(SystemExit) as exc:
        cli.main(["frobnicate"])
    assert exc.value.code == 1
    assert cli.main(["gen-data", "--config", str(tmp_path / "missing.json"), "--out", "x.gsf"]) == 1


def test_data_errors(tmp_path, pipeline):
    root, cfg, data = pipeline
    bad = tmp_path / "bad.gsf"
    bad.write_bytes(b"GSF1" + b"\0" * 10)
    assert cli.main(["train", "--config", cfg, "--data", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert cli.main(["eval", "--checkpoint", str(tmp_path / "none.aoc"), "--data", data,
                     "--out", str(tmp_path / "o")]) == 2
    assert cli.main(["report", "--eval-dir", str(tmp_path), "--out", str(tmp_path / "o")]) == 2


def test_cono_rejects_other_grid(tmp_path, pipeline):
    root, _, _ = pipeline
    other = tmp_path / "other.gsf"
    gen = np.random.default_rng(0)
    D.save_gsf(D.GridSeries(3600 * np.arange(30), gen.uniform(size=(30, 16, 16))), other)
    rc = cli.main(["eval", "--checkpoint", str(root / "run" / "final.aoc"), "--data", str(other),
                   "--out", str(tmp_path / "o")])
    assert rc == 2


def test_numeric_failure_exit_code(tmp_path, pipeline):
    _, _, data = pipeline
    wild = dict(SMALL, train=dict(SMALL["train"], lr0=1e305, epochs=3))
    rc = cli.main(["train", "--config", write_config(tmp_path, wild), "--data", data,
                   "--out", str(tmp_path / "o"), "--quiet"])
    assert rc == 3
    assert (tmp_path / "o" / "diagnostic.aoc").exists()
