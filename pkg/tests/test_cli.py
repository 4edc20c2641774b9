import json
import os

import numpy as np
import pytest

from app import cli
from app.config import config
from app.models import const
from app.services import grid as grid_service
from app.services import state as sm
from app.services import task as tm
from app.utils import utils


def _write_config(tmp_path, name="experiment", **overrides):
    cfg = {
        "grid": {"dim": 1, "extent": 40.0, "points_per_axis": 4096},
        "kernel": {"family": "laplace", "delta": 1.0},
        "lambdas": [1.0],
    }
    cfg.update(overrides)
    target = tmp_path / f"{name}.json"
    target.write_text(json.dumps(cfg, indent=2), encoding="utf-8")
    return str(target)


def _report(out_dir):
    with open(os.path.join(out_dir, "report.json"), encoding="utf-8") as fp:
        return json.load(fp)


def test_resolvent_run_writes_fields_and_report(tmp_path):
    out = str(tmp_path / "out")
    code = cli.main(["resolvent", "--config", _write_config(tmp_path), "--out", out])
    assert code == const.EXIT_OK

    g = grid_service.read_field_csv(os.path.join(out, "fields", "resolvent_spectral_lambda_1.csv"))
    assert g.values[g.grid.points_per_axis // 2] == pytest.approx(0.353553, abs=1e-4)
    assert os.path.isfile(os.path.join(out, "fields", "resolvent_neumann_lambda_1.json"))
    assert os.path.isfile(os.path.join(out, "plot_data", "resolvent_lambda_1.csv"))
    with open(os.path.join(out, "run.log"), encoding="utf-8") as fp:
        assert "starting run" in fp.read()

    report = _report(out)
    assert utils.schema_errors(report, "report.json") == []
    assert all(check["pass"] for check in report["checks"])


def test_lambda_flag_replaces_config_lambdas(tmp_path):
    out = str(tmp_path / "out")
    code = cli.main(["resolvent", "--config", _write_config(tmp_path), "--out", out, "--lambda", "0.5", "--lambda", "2"])
    assert code == const.EXIT_OK
    fields = sorted(os.listdir(os.path.join(out, "fields")))
    assert "resolvent_spectral_lambda_0.5.csv" in fields
    assert "resolvent_spectral_lambda_2.csv" in fields
    assert "resolvent_spectral_lambda_1.csv" not in fields
    assert _report(out)["lambda_grid"] == [0.5, 2.0]


def test_rerun_is_byte_identical(tmp_path):
    config_path = _write_config(tmp_path, lambdas=[1.0, 0.5])
    out = str(tmp_path / "out")
    assert cli.main(["resolvent", "--config", config_path, "--out", out]) == const.EXIT_OK
    with open(os.path.join(out, "report.json"), "rb") as fp:
        first = fp.read()
    assert cli.main(["resolvent", "--config", config_path, "--out", out]) == const.EXIT_OK
    with open(os.path.join(out, "report.json"), "rb") as fp:
        assert fp.read() == first


def test_groundstate_needs_a_potential(tmp_path):
    assert cli.main(["groundstate", "--config", _write_config(tmp_path)]) == const.EXIT_USAGE


def test_groundstate_run(tmp_path):
    config_path = _write_config(
        tmp_path,
        grid={"dim": 1, "extent": 40.0, "points_per_axis": 512},
        potential={"support_radius": 1.0, "height": 1.0},
    )
    out = str(tmp_path / "out")
    assert cli.main(["groundstate", "--config", config_path, "--out", out]) == const.EXIT_OK
    with open(os.path.join(out, "fields", "groundstate.json"), encoding="utf-8") as fp:
        sidecar = json.load(fp)
    assert sidecar["edge_detected"] is False
    assert sidecar["lambda"] > 0


def test_evolve_run(tmp_path):
    config_path = _write_config(
        tmp_path,
        grid={"dim": 1, "extent": 40.0, "points_per_axis": 1024},
        m=0.5,
        source={"kind": "box", "radius": 1.0},
        t_end=1.0,
        dt=0.01,
    )
    out = str(tmp_path / "out")
    assert cli.main(["evolve", "--config", config_path, "--out", out]) == const.EXIT_OK
    assert os.path.isfile(os.path.join(out, "trace", "manifest.json"))
    assert os.path.isfile(os.path.join(out, "fields", "stationary.csv"))


def test_mc_oracle_seed_override(tmp_path):
    config_path = _write_config(
        tmp_path,
        grid={"dim": 1, "extent": 40.0, "points_per_axis": 256},
        mc={"seed": 1, "n_walks": 200_000},
        tolerances={"mc_sigma": 5.0},
    )
    out = str(tmp_path / "out")
    code = cli.main(["mc-oracle", "--config", config_path, "--out", out, "--seed", "77"])
    assert code == const.EXIT_OK
    assert _report(out)["data"]["mc_lambda_1"]["seed"] == 77
    with open(os.path.join(out, "histograms", "mc_lambda_1_manifest.json"), encoding="utf-8") as fp:
        manifest = json.load(fp)
    assert manifest["seed"] == 77
    assert manifest["total_mass"] == 1.0


@pytest.mark.slow
def test_verify_polynomial_sweep(tmp_path):
    config_path = _write_config(
        tmp_path,
        grid={"dim": 1, "extent": 4000.0, "points_per_axis": 131072},
        kernel={"family": "polynomial", "alpha": 1.0},
        lambdas=[0.4, 0.2, 0.1, 0.05],
    )
    out = str(tmp_path / "out")
    assert cli.main(["verify", "--config", config_path, "--out", out]) == const.EXIT_OK
    sweep = np.loadtxt(os.path.join(out, "plot_data", "lambda_sweep.csv"), delimiter=",", skiprows=1, ndmin=2)
    assert sweep.shape[0] == 4


def test_invalid_json_reports_its_line(tmp_path, capsys):
    target = tmp_path / "broken.json"
    target.write_text('{\n  "kernel": {"family": "laplace", "delta": 1.0},\n  "lambdas": [1.0,]\n}\n', encoding="utf-8")
    assert cli.main(["resolvent", "--config", str(target)]) == const.EXIT_USAGE
    assert "broken.json:3:" in capsys.readouterr().err


def test_schema_violation_points_at_the_key(tmp_path, capsys):
    config_path = _write_config(tmp_path, lambdas=[-1.0])
    assert cli.main(["resolvent", "--config", config_path]) == const.EXIT_USAGE
    err = capsys.readouterr().err
    assert "lambdas" in err

    config_path = _write_config(tmp_path, name="extra", colour="blue")
    assert cli.main(["resolvent", "--config", config_path]) == const.EXIT_USAGE


def test_usage_errors():
    assert cli.main(["nonsense", "--config", "x.json"]) == const.EXIT_USAGE
    assert cli.main(["resolvent"]) == const.EXIT_USAGE
    assert cli.main(["resolvent", "--config", "does-not-exist.json"]) == const.EXIT_USAGE


def test_numerical_failure_exits_one(tmp_path):
    # the gaussian kernel is unresolved on an 8-node grid
    config_path = _write_config(
        tmp_path,
        grid={"dim": 1, "extent": 4.0, "points_per_axis": 8},
        kernel={"family": "gaussian", "sigma": 1.0},
    )
    assert cli.main(["resolvent", "--config", config_path, "--out", str(tmp_path / "out")]) == const.EXIT_VERDICT_FAILED


def test_run_state_is_tracked(tmp_path):
    cfg = cli.load_experiment(_write_config(tmp_path), "resolvent", out=str(tmp_path / "out"))
    report = tm.start("run-1", cfg)
    run = sm.state.get_run("run-1")
    assert run["state"] == const.RUN_STATE_COMPLETE
    assert run["progress"] == 100
    assert run["passed"] == report.passed
    sm.state.delete_run("run-1")
    assert sm.state.get_run("run-1") is None


def test_log_level_environment_override(monkeypatch):
    from app.config import log_level

    monkeypatch.setenv("JUMPGEN_LOG_LEVEL", "warning")
    assert log_level() == "WARNING"
    monkeypatch.delenv("JUMPGEN_LOG_LEVEL")
    assert log_level() == config.log_level
