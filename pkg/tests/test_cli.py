"""Subcommand exit codes, artifacts, determinism, and input immutability."""

import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from bikefault.cli import main

SMALL_CONFIG = {
    "synth": {"n_bikes": 48, "faulty_fraction": 0.25, "days": 2, "lambda_normal": 7.0,
              "lambda_faulty": 2.0, "fragmentation": 0.7, "gps_period_s": 300, "seed": 9},
    "split": {"ratio": 0.75, "seed": 9},
    "features": {"t_steps": 8},
    "model": {"d_model": 16, "n_heads": 2, "n_layers": 1, "d_ff": 32,
              "mask_ratio": 0.15, "mask_mean_len": 3.0, "dropout": 0.0, "n_classes": 2},
    "pretrain": {"epochs": 2, "batch_size": 16, "lr": 1e-3, "seed": 9,
                 "loss_scope": "full", "precision": "f32"},
    "finetune": {"epochs": 2, "batch_size": 16, "lr": 1e-2, "seed": 9,
                 "label_fraction": 1.0, "precision": "f32"},
    "baselines": {"logreg_epochs": 100, "logreg_lr": 0.1, "knn_k": 3,
                  "scratch_epochs": 2, "seed": 9},
}


@pytest.fixture()
def config_file(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(SMALL_CONFIG))
    return str(path)


def _dir_bytes(root: Path) -> dict:
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


def test_synth_twice_is_byte_identical(tmp_path, config_file):
    assert main(["synth", "--config", config_file, "--out", str(tmp_path / "a")]) == 0
    assert main(["synth", "--config", config_file, "--out", str(tmp_path / "b")]) == 0
    assert _dir_bytes(tmp_path / "a") == _dir_bytes(tmp_path / "b")


def test_pipeline_stages_and_artifacts(tmp_path, config_file):
    out = tmp_path / "run"
    assert main(["pipeline", "--config", config_file, "--out", str(out)]) == 0
    expected = [
        "data/trips.csv", "data/gps.csv", "data/labels.csv", "data/manifest.json",
        "splits/train/trips.csv", "splits/test/labels.csv", "splits/skip_report.json",
        "tensors/train/meta.json", "tensors/train/data.bin", "tensors/test/labels.bin",
        "checkpoints/pretrained/weights.bin", "checkpoints/pretrained/trainlog.jsonl",
        "checkpoints/finetuned/weights.bin",
        "baselines/baseline_reports.jsonl",
        "eval/report.jsonl",
        "report/table.txt", "report/reports.jsonl",
    ]
    for rel in expected:
        assert (out / rel).exists(), rel
    # every stage directory carries its resolved config
    for stage in ("data", "splits", "tensors", "checkpoints/pretrained",
                  "checkpoints/finetuned", "baselines", "eval", "report"):
        assert (out / stage / "config.resolved.json").exists(), stage
    # featurize count pass-through: train + test tensors hold every bike
    meta_train = json.loads((out / "tensors" / "train" / "meta.json").read_text())
    meta_test = json.loads((out / "tensors" / "test" / "meta.json").read_text())
    assert meta_train["n"] + meta_test["n"] == SMALL_CONFIG["synth"]["n_bikes"]
    table = (out / "report" / "table.txt").read_text()
    assert "logreg" in table and "transformer-scratch" in table and "transformer-pretrained" in table


def test_featurize_does_not_mutate_inputs(tmp_path, config_file):
    out = tmp_path / "run"
    assert main(["synth", "--config", config_file, "--out", str(out / "data")]) == 0
    assert main(["ingest", "--config", config_file, "--data", str(out / "data"),
                 "--out", str(out / "splits")]) == 0
    before = _dir_bytes(out / "splits")
    assert main(["featurize", "--config", config_file, "--data", str(out / "splits"),
                 "--out", str(out / "tensors")]) == 0
    assert _dir_bytes(out / "splits") == before


def test_predict_writes_expected_columns(tmp_path, config_file):
    out = tmp_path / "run"
    assert main(["pipeline", "--config", config_file, "--out", str(out)]) == 0
    assert main(["predict", "--tensor", str(out / "tensors" / "test"),
                 "--checkpoint", str(out / "checkpoints" / "finetuned"),
                 "--out", str(out / "predictions")]) == 0
    lines = (out / "predictions" / "predictions.csv").read_text().splitlines()
    assert lines[0] == "bike_id,prob_unusable,status"
    bike, prob, status = lines[1].split(",")
    assert bike.startswith("B")
    assert 0.0 <= float(prob) <= 1.0
    assert status in ("0", "1")


def test_eval_missing_checkpoint_exits_one(tmp_path, config_file, capsys):
    out = tmp_path / "run"
    assert main(["synth", "--config", config_file, "--out", str(out / "data")]) == 0
    code = main(["eval", "--tensor", str(out / "tensors" / "test"),
                 "--checkpoint", str(out / "missing"), "--out", str(out / "eval")])
    assert code == 1
    err = capsys.readouterr().err
    assert "missing" in err or "no checkpoint" in err


def test_bad_config_value_exits_one(tmp_path, capsys):
    bad = dict(SMALL_CONFIG)
    bad["synth"] = dict(bad["synth"], faulty_fraction=2.0)
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps(bad))
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "x")]) == 1
    assert "faulty_fraction" in capsys.readouterr().err


def test_pretrain_masked_scope_and_f64_flags(tmp_path, config_file):
    out = tmp_path / "run"
    assert main(["synth", "--config", config_file, "--out", str(out / "data")]) == 0
    assert main(["ingest", "--config", config_file, "--data", str(out / "data"),
                 "--out", str(out / "splits")]) == 0
    assert main(["featurize", "--config", config_file, "--data", str(out / "splits"),
                 "--out", str(out / "tensors")]) == 0
    assert main(["pretrain", "--config", config_file, "--tensor", str(out / "tensors" / "train"),
                 "--out", str(out / "ckpt"), "--loss-scope", "masked",
                 "--precision", "f64", "--epochs", "1"]) == 0
    resolved = json.loads((out / "ckpt" / "config.resolved.json").read_text())
    assert resolved["pretrain"]["loss_scope"] == "masked"
    assert resolved["pretrain"]["precision"] == "f64"
    # weights persist as float32 regardless of training precision
    meta = json.loads((out / "ckpt" / "meta.json").read_text())
    n_scalars = sum(int(np.prod(p["shape"])) for p in meta["params"])
    assert (out / "ckpt" / "weights.bin").stat().st_size == 4 * n_scalars


def test_unknown_command_exits_two():
    proc = subprocess.run([sys.executable, "-m", "bikefault", "frobnicate"],
                          capture_output=True, text=True)
    assert proc.returncode == 2
    assert "usage" in proc.stderr.lower()


def test_malformed_data_file_exits_one(tmp_path, config_file, capsys):
    data = tmp_path / "data"
    data.mkdir()
    (data / "trips.csv").write_text("bike_id,start_time,end_time,start_lat,start_lon,end_lat,end_lon\n"
                                    "B1,not-a-time,2021-06-01T00:10:00Z,30,104,30,104\n")
    (data / "gps.csv").write_text("bike_id,timestamp,lat,lon\n")
    (data / "labels.csv").write_text("bike_id,status\n")
    code = main(["ingest", "--config", config_file, "--data", str(data),
                 "--out", str(tmp_path / "splits")])
    assert code == 1
    assert "start_time" in capsys.readouterr().err
