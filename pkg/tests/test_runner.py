#!/usr/bin/env python3
# -*- coding: utf-8 -*-
import json
import sys
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from mirage.artifacts import save_model
from mirage.config import load_config
from mirage.errors import ConfigError
from mirage.main import main
from mirage.mlp import MlpModel
from mirage.runner import run
from mirage.synthetic import make_compas_like, write_dataset

SCHEMA = "column.group = sensitive\ncolumn.y = outcome\n"


def write_config(directory: Path, text: str) -> Path:
    path = directory / "experiment.conf"
    path.write_text(text, encoding="utf-8")
    return path


def toy(directory: Path) -> Path:
    (directory / "toy.csv").write_text(
        "x1,group,y\n0.5,1,0\n1.5,0,1\n-0.2,1,1\n", encoding="utf-8"
    )
    (directory / "toy.schema").write_text(SCHEMA, encoding="utf-8")
    return write_config(directory, "seed = 1\ndata.path = toy.csv\ndata.schema = toy.schema\n")


def grouped(directory: Path, extra: str = "") -> Path:
    """40 rows: negatives near x1 = -1.5, positives near 1.5, groups alternating."""
    rng = np.random.default_rng(0)
    y = np.tile([0, 0, 1, 1], 10)
    frame = pd.DataFrame({
        "x1": np.where(y == 1, 1.5, -1.5) + 0.2 * rng.standard_normal(40),
        "group": np.tile([0, 1], 20),
        "y": y,
    })
    frame.to_csv(directory / "grouped.csv", index=False)
    (directory / "grouped.schema").write_text(SCHEMA, encoding="utf-8")
    return write_config(directory, (
        "seed = 2\ndata.path = grouped.csv\ndata.schema = grouped.schema\n"
        "split.train_fraction = 0.5\ncf.inner_steps = 300\ncf.dice_count = 2\n"
        "audit.instances = 3\n" + extra
    ))


def manifest(directory: Path) -> dict:
    return json.loads((directory / "manifest.json").read_text(encoding="utf-8"))


def test_ingest_summarizes_toy_csv(tmp_path):
    config = load_config(toy(tmp_path))
    assert run("ingest", config, tmp_path / "out") == 0
    out = tmp_path / "out" / "ingest"
    info = json.loads((out / "summary.json").read_text(encoding="utf-8"))
    assert info["n_rows"] == 3
    assert info["n_features"] == 2
    assert info["groups"] == {
        "protected_positive": 1,
        "protected_negative": 1,
        "non_protected_positive": 1,
        "non_protected_negative": 0,
    }
    assert manifest(out)["files"] == ["summary.json"]


def test_synth_is_deterministic(tmp_path):
    config = load_config(write_config(
        tmp_path, "seed = 4\nsynth.kind = two_basin\nsynth.rows = 40\n"
    ))
    run("synth", config, tmp_path / "a")
    run("synth", config, tmp_path / "b")
    a, b = tmp_path / "a" / "synth", tmp_path / "b" / "synth"
    assert manifest(a)["files"] == ["two_basin.csv", "two_basin.schema"]
    for name in manifest(a)["files"]:
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert len(pd.read_csv(a / "two_basin.csv")) == 40


def saved_attack(root: Path) -> None:
    attacked = root / "attack-recourse"
    attacked.mkdir(parents=True)
    save_model(attacked / "model.json", MlpModel((2, 1), np.array([4.0, 0.0, 0.0])))
    (attacked / "delta.txt").write_text("0.0\n0.0\n", encoding="utf-8")


def test_audit_reads_attack_outputs(tmp_path):
    config = load_config(grouped(tmp_path))
    saved_attack(tmp_path / "out")
    run("audit", config, tmp_path / "out")
    out = tmp_path / "out" / "audit"
    first = (out / "audit.json").read_bytes()
    report = json.loads(first)
    names = [row["algorithm"] for row in report["rows"]]
    assert names == ["wachter", "sparse_wachter", "prototype", "dice"]
    assert report["rows"][0]["cost_reduction"] == 1.0
    assert manifest(out)["files"] == ["audit.json", "audit.txt"]

    run("audit", config, tmp_path / "out")
    assert (out / "audit.json").read_bytes() == first


def test_audit_without_model_is_a_config_error(tmp_path):
    config = load_config(grouped(tmp_path))
    with pytest.raises(ConfigError, match="audit.model"):
        run("audit", config, tmp_path / "out")


def test_explain_one_row(tmp_path):
    config = load_config(grouped(tmp_path, "lime.n_samples = 200\nexplain.instance = 0\n"))
    saved_attack(tmp_path / "out")
    run("explain", config, tmp_path / "out")
    explanation = json.loads(
        (tmp_path / "out" / "explain" / "explain.json").read_text(encoding="utf-8")
    )
    assert explanation["columns"] == ["x1", "group"]
    assert explanation["lime"]["ranked_features"][0] == 0
    cf = explanation["counterfactual"]
    assert cf["converged"]
    assert cf["model_prob"] >= 0.5
    assert cf["x_original"][1] == pytest.approx(0.0, abs=1e-12)

    bad = load_config(grouped(tmp_path, "explain.instance = 400\n"))
    with pytest.raises(ConfigError, match="explain.instance"):
        run("explain", bad, tmp_path / "out")


def test_attack_recourse_emits_model_delta_and_trace(tmp_path):
    config = load_config(grouped(tmp_path, (
        "mlp.hidden = 3\nattack.outer_steps = 2\nattack.pretrain_steps = 5\n"
        "attack.batch_size = 2\nattack.unroll_steps = 3\nattack.inner_steps = 50\n"
    )))
    run("attack-recourse", config, tmp_path / "out")
    out = tmp_path / "out" / "attack-recourse"
    assert manifest(out)["files"] == [
        "baseline.json", "delta.txt", "model.json", "parity.json", "trace.csv",
    ]
    assert len(pd.read_csv(out / "trace.csv")) == 2
    assert len((out / "delta.txt").read_text(encoding="utf-8").split()) == 2
    parity = json.loads((out / "parity.json").read_text(encoding="utf-8"))
    assert parity["gap"] == parity["acc_baseline"] - parity["acc_model"]


def test_attack_lime_is_deterministic(tmp_path):
    frame, schema = make_compas_like(300, seed=0)
    write_dataset(frame, schema, tmp_path, "compas")
    config = load_config(write_config(tmp_path, (
        "seed = 5\ndata.path = compas.csv\ndata.schema = compas.schema\n"
        "split.train_fraction = 0.5\nforest.n_trees = 5\nforest.max_depth = 4\n"
        "lime.n_samples = 200\nlime.instances = 3\n"
    )))
    run("attack-lime", config, tmp_path / "a")
    run("attack-lime", config, tmp_path / "b")
    a, b = tmp_path / "a" / "attack-lime", tmp_path / "b" / "attack-lime"
    files = manifest(a)["files"]
    assert "attribution_k1_scaffold.dat" in files
    assert "pca_k2.dat" in files
    assert "discriminator_k1.json" in files
    for name in files:
        assert (a / name).read_bytes() == (b / name).read_bytes()
    results = json.loads((a / "attack_lime.json").read_text(encoding="utf-8"))
    assert set(results) == {"k1", "k2"}
    assert results["k1"]["sensitive_top1"] == 1.0
    assert 0.0 <= results["k2"]["fidelity"] <= 1.0
    for key in ("k1", "k2"):
        above = results[key]["pca_separation_accuracy"] > 0.75
        assert results[key]["pca_separation_above_bound"] == above


def test_main_maps_errors_to_exit_codes(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv("MIRAGE_OUTPUT_DIR", raising=False)
    assert main(["ingest", "--config", str(tmp_path / "missing.conf")]) == 2
    error = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert error["error"] == "ConfigError"
    assert error["exit_code"] == 2
    assert "missing.conf" in error["message"]

    conf = toy(tmp_path)
    (tmp_path / "toy.csv").write_text("x1,group,y\n0.5,1,0\nabc,0,1\n", encoding="utf-8")
    assert main(["ingest", "--config", str(conf)]) == 3
    error = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert error["error"] == "MalformedRow"


def test_main_reports_small_lime_sample_as_config_error(tmp_path, capsys):
    conf = grouped(tmp_path, "lime.n_samples = 3\nexplain.mode = lime\n")
    saved_attack(tmp_path / "out")
    assert main(["explain", "--config", str(conf), "--output", str(tmp_path / "out")]) == 2
    error = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert error["error"] == "TooFewSamples"
    assert "lime.n_samples" in error["message"]


def test_main_output_precedence(tmp_path, monkeypatch):
    conf = toy(tmp_path)
    monkeypatch.setenv("MIRAGE_OUTPUT_DIR", str(tmp_path / "env"))
    assert main(["ingest", "--config", str(conf), "--output", str(tmp_path / "flag")]) == 0
    assert (tmp_path / "flag" / "ingest" / "summary.json").exists()
    assert main(["ingest", "--config", str(conf)]) == 0
    assert (tmp_path / "env" / "ingest" / "summary.json").exists()
    monkeypatch.delenv("MIRAGE_OUTPUT_DIR")
    assert main(["ingest", "--config", str(conf)]) == 0
    assert (tmp_path / "output" / "ingest" / "summary.json").exists()


if __name__ == "__main__":
    import tempfile
    with tempfile.TemporaryDirectory() as d:
        test_ingest_summarizes_toy_csv(Path(d))
    print("ok")
