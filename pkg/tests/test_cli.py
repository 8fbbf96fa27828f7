import json

import numpy as np
import pytest

from gradflow import data as dp
from gradflow.builder import FitConfig, fit
from gradflow.cli import main
from gradflow.potential import model_from_json, model_to_json, predict_field_batch


@pytest.fixture
def workdir(tmp_path):
    assert main(["simulate", "--seed", "3", "--out", str(tmp_path / "traj")]) == 0
    assert main(["derivatives", "--dir", str(tmp_path / "traj"), "--out", str(tmp_path / "data.csv")]) == 0
    return tmp_path


def test_simulate_layout(workdir):
    files = sorted((workdir / "traj").iterdir())
    assert len(files) == 18
    rows = sum(len(dp.read_trajectory_csv(f)) for f in files)
    assert rows == 118


def test_simulate_matches_library(workdir):
    cfg = dp.ExperimentConfig(seed=3)
    data, _, _ = dp.generate_dataset(cfg, 3)
    assert (workdir / "data.csv").read_text() == dp.write_dataset_csv(data)


def test_single_trajectory(tmp_path, capsys):
    assert main(["simulate", "--seed", "0", "--x0", "1,1", "--steps", "5", "--sigma-w", "0", "--out", str(tmp_path)]) == 0
    tr = dp.read_trajectory_csv(tmp_path / "traj_000.csv")
    assert len(tr) == 5 and np.array_equal(tr.states[0], [1.0, 1.0])
    assert "1 trajectories" in capsys.readouterr().out


def test_fit_and_predict_byte_identical(workdir, capsys):
    model_path = workdir / "model.json"
    assert main(["fit", "--dataset", str(workdir / "data.csv"), "--lambda", "1e-6", "--out", str(model_path)]) == 0
    out = capsys.readouterr().out
    assert "objective" in out and "feasibility residual" in out
    data = dp.read_dataset_csv(workdir / "data.csv")
    direct = fit(data, FitConfig("dc", lam=1e-6)).model
    assert model_path.read_text() == model_to_json(direct) + "\n"

    pts = workdir / "pts.csv"
    dp.write_points_csv(data.x[:10], pts)
    assert main(["predict", "--model", str(model_path), "--tau", "0.02", "--points", str(pts)]) == 0
    got = capsys.readouterr().out
    F = predict_field_batch(direct, 0.02, data.x[:10])
    assert got == dp.write_rows_csv(None, ["x1", "x2", "f1", "f2"], np.column_stack([data.x[:10], F]))


@pytest.mark.parametrize(
    "extra",
    [["--variant", "convex"], ["--variant", "strongly-convex", "--mu", "0.1"], ["--variant", "equilibrium", "--x0", "0,0"]],
)
def test_fit_variants(workdir, extra, capsys):
    out = workdir / "m.json"
    assert main(["fit", "--dataset", str(workdir / "data.csv"), "--out", str(out)] + extra) == 0
    model_from_json(out.read_text())


def test_inspect(workdir, capsys):
    out = workdir / "m.json"
    main(["fit", "--dataset", str(workdir / "data.csv"), "--variant", "convex", "--out", str(out)])
    capsys.readouterr()
    assert main(["inspect-model", "--model", str(out)]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["kind"] == "max-affine" and doc["planes"] == 118


def test_crossval(workdir, capsys):
    rc = main([
        "crossval", "--dataset", str(workdir / "data.csv"), "--seed", "0",
        "--lambda-grid", "1e-8,1e-4", "--tau-grid", "0.02,0.08", "--out", str(workdir / "cv"),
    ])
    assert rc == 0
    line = capsys.readouterr().out
    assert line.startswith("lambda ")
    rep = json.loads((workdir / "cv" / "report.json").read_text())
    assert rep["lambda"] in (1e-8, 1e-4) and rep["tau"] in (0.02, 0.08)


def test_reproduce_small_grid(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    dp.save_config(dp.ExperimentConfig(lambda_grid=(1e-8,), tau_grid=(0.04,)), cfg)
    assert main(["reproduce-paper", "--seed", "1", "--config", str(cfg), "--out", str(tmp_path / "out")]) == 0
    assert "holdout R^2" in capsys.readouterr().out
    rep = json.loads((tmp_path / "out" / "report.json").read_text())
    assert rep["lambda"] == 1e-8 and rep["metrics"]["seed"] == 1
    # flags override the config file
    saved = json.loads((tmp_path / "out" / "config.json").read_text())
    assert saved["seed"] == 1 and saved["lambda_grid"] == [1e-8]


def test_usage_errors(tmp_path, capsys):
    for argv in (
        [],
        ["simulate", "--out", str(tmp_path)],
        ["fit", "--dataset", "x.csv", "--variant", "nope"],
        ["fit", "--dataset", "x.csv", "--variant", "strongly-convex"],
    ):
        with pytest.raises(SystemExit) as info:
            main(argv)
        assert info.value.code == 2
    capsys.readouterr()


def test_runtime_error_json(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("x1,x2,y1,y2\n0,0,1,oops\n")
    assert main(["--json-errors", "fit", "--dataset", str(bad)]) == 1
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "ParseError" and (err["line"], err["column"]) == (2, 7)
    assert main(["fit", "--dataset", str(bad), "--json-errors"]) == 1
    assert json.loads(capsys.readouterr().err)["error"] == "ParseError"


def test_missing_file(tmp_path, capsys):
    assert main(["fit", "--dataset", str(tmp_path / "none.csv")]) == 1
    assert capsys.readouterr().err.startswith("error:")


def test_config_schema_error(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text('{"sigma_w": "loud"}')
    assert main(["--json-errors", "simulate", "--seed", "0", "--config", str(cfg), "--out", str(tmp_path)]) == 1
    assert json.loads(capsys.readouterr().err)["error"] == "SchemaError"
