import json

import numpy as np
import pytest
import yaml

from stochbl.cli import main
from stochbl.config import parse_config, preset_document
from stochbl.pinn import InputNormalizer, SurrogateModel
from stochbl.runner import PhaseError, bench, run_scenario

TINY_TRAINING = {"depth": 2, "width": 6, "n_samples": 100, "iterations": 20}


def tiny(preset="homogeneous-narrow", samples=20, **extra):
    doc = {"preset": preset, "samples": samples, "eval": {"n_x": 101, "n_series_times": 101}}
    if "training" in preset_document(preset):
        doc["training"] = dict(TINY_TRAINING)
    doc.update(extra)
    return doc


def write_config(tmp_path, doc, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(doc))
    return str(path)


# -- pipeline ----------------------------------------------------------------


def test_run_scenario_is_reproducible(tmp_path):
    cfg = parse_config(tiny())
    m1, _ = run_scenario(cfg, tmp_path / "a")
    m2, _ = run_scenario(cfg, tmp_path / "b")
    assert m1.artifacts == m2.artifacts
    assert m1.config_hash == m2.config_hash
    for name in ("profiles_reference.csv", "profiles_surrogate.csv", "model.npz", "loss_history.csv",
                 "qoi_reference_front_radius.csv", "qoi_surrogate_breakthrough_time.csv", "report.json",
                 "config.yaml", "plot_results.py"):
        assert name in m1.artifacts
    saved = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert saved["status"] == "ok" and saved["artifacts"] == m1.artifacts
    for phase in ("sampling", "solving", "training", "inference", "metrics"):
        assert saved["wall_times"][phase] >= 0.0


def test_report_has_table_fields(tmp_path):
    _, results = run_scenario(parse_config(tiny()), tmp_path)
    report = json.loads((tmp_path / "report.json").read_text())
    for kind in ("front_radius", "breakthrough_time"):
        s = report["summary"][kind]
        for key in ("avg_w1", "avg_w1_uniform", "relative_difference", "relative_difference_alt"):
            # an untrained surrogate may censor every front, which is reported as null
            assert key in s and (s[key] is None or isinstance(s[key], float))
    bt = report["summary"]["breakthrough_time"]
    assert bt["relative_difference"] == pytest.approx(bt["avg_w1"] / bt["avg_w1_uniform"])
    assert results["comparison"].relative("breakthrough_time") == pytest.approx(bt["relative_difference"])


def test_csv_layouts(tmp_path):
    run_scenario(parse_config(tiny(samples=3)), tmp_path)
    prof = np.genfromtxt(tmp_path / "profiles_reference.csv", delimiter=",", names=True)
    assert prof.dtype.names == ("realization", "t", "x", "S")
    assert len(prof) == 3 * 5 * 101
    with open(tmp_path / "qoi_reference_breakthrough_time.csv") as fh:
        assert fh.readline().strip() == "realization,anchor,value,censored"


def test_reference_only_run(tmp_path):
    doc = tiny()
    cfg = parse_config(doc)
    from dataclasses import replace

    manifest, results = run_scenario(replace(cfg, training=None), tmp_path)
    assert "reference" in results and "surrogate" not in results
    assert not any("surrogate" in a or a == "model.npz" for a in manifest.artifacts)
    assert "training" not in manifest.wall_times


def test_phase_failure_reports_phase(tmp_path):
    cfg = parse_config(tiny(samples=2))
    wrong = SurrogateModel(InputNormalizer((0.0, 0.0), (1.0, 1.0)), depth=1, width=2)
    with pytest.raises(PhaseError) as err:
        run_scenario(cfg, tmp_path, model=wrong)
    assert err.value.phase == "inference"
    saved = json.loads((tmp_path / "manifest.json").read_text())
    assert saved["status"] == "failed" and saved["failed_phase"] == "inference"
    assert "profiles_reference.csv" in saved["artifacts"]


def test_bench_reports_both_paths():
    cfg = parse_config(tiny())
    small = bench(cfg, n=10)
    large = bench(cfg, n=1000)
    assert large["mcs"]["total"] > small["mcs"]["total"] > 0
    for rep in (small, large):
        s = rep["surrogate"]
        assert s["training"] > 0 and s["inference"] > 0
        assert s["inference_per_1000"] == pytest.approx(s["inference"] * 1000 / rep["samples"])


# -- command line ----------------------------------------------------------------


def test_presets_command(capsys):
    assert main(["presets"]) == 0
    assert "homogeneous-narrow" in capsys.readouterr().out


def test_solve_command(tmp_path):
    out = tmp_path / "solve"
    assert main(["solve", "--preset", "homogeneous-narrow", "--out", str(out), "--velocity", "1.0",
                 "--times", "0.25", "0.5"]) == 0
    rows = np.genfromtxt(out / "solution.csv", delimiter=",", names=True, dtype=None, encoding=None)
    assert set(rows["method"]) == {"moc", "fvm"}
    assert set(np.round(rows["t"], 6)) == {0.25, 0.5}
    manifest = json.loads((out / "manifest.json").read_text())
    assert set(manifest["artifacts"]) == {"config.yaml", "solution.csv"}


def test_sample_command(tmp_path):
    out = tmp_path / "sample"
    assert main(["sample", "--preset", "affine", "--samples", "4", "--points", "11", "--out", str(out)]) == 0
    table = np.loadtxt(out / "fields.csv", delimiter=",", skiprows=1)
    assert table.shape == (44, 3) and np.all(table[:, 2] > 0)


def test_train_infer_and_uq_commands(tmp_path):
    cfg = write_config(tmp_path, tiny(samples=5))
    train_dir = tmp_path / "train"
    assert main(["train", "--config", cfg, "--iterations", "3", "--out", str(train_dir)]) == 0
    model = str(train_dir / "model.npz")
    hist = np.loadtxt(train_dir / "loss_history.csv", delimiter=",", skiprows=1)
    assert hist.shape[0] == 3
    assert main(["infer", "--config", cfg, "--model", model, "--out", str(tmp_path / "infer")]) == 0
    assert (tmp_path / "infer" / "profiles_surrogate.csv").exists()
    assert main(["uq", "--config", cfg, "--model", model, "--out", str(tmp_path / "uq")]) == 0
    manifest = json.loads((tmp_path / "uq" / "manifest.json").read_text())
    assert "model.npz" not in manifest["artifacts"] and "report.json" in manifest["artifacts"]


def test_moments_command(tmp_path):
    cfg = write_config(tmp_path, {"preset": "expcov-s2", "moments_samples": 10,
                                  "moments": {"n_cells": 64, "snapshots": [0.25, 0.5]}})
    out = tmp_path / "mom"
    assert main(["moments", "--config", cfg, "--no-train", "--out", str(out)]) == 0
    rows = np.genfromtxt(out / "moments.csv", delimiter=",", names=True, dtype=None, encoding=None)
    assert set(rows["method"]) == {"FD", "MC"}


def test_exit_code_for_invalid_configuration(tmp_path, capsys):
    doc = preset_document("homogeneous-narrow")
    doc["velocity"]["distribution"]["low"] = 5.0
    assert main(["solve", "--config", write_config(tmp_path, doc)]) == 2
    assert "velocity.distribution" in capsys.readouterr().err
    assert main(["solve"]) == 2
    assert main(["solve", "--config", str(tmp_path / "missing.yaml")]) == 2
    assert main(["frobnicate"]) == 2
    assert main(["infer", "--preset", "homogeneous-narrow", "--out", str(tmp_path / "x")]) == 2


def test_exit_code_for_numerical_failure(tmp_path):
    doc = {"preset": "affine", "velocity": {"kind": "affine", "b": -50.0,
                                            "distribution": {"kind": "uniform", "low": 0.0, "up": 1.0}},
           "training": {"theta_ranges": [[0.0, 1.0]]}}
    assert main(["sample", "--config", write_config(tmp_path, doc), "--out", str(tmp_path / "s")]) == 3
