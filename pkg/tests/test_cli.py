"""CLI surface: subcommands, JSON outputs, artifacts, and exit codes."""

import json

import numpy as np
import pytest

from densetest import ModelTheta, SpaceConfig, sample_dataset, save_dataset
from densetest.cli import main


@pytest.fixture()
def data_csv(tmp_path):
    theta = ModelTheta(beta=1.0, gamma=np.zeros(9), sigma_cov=np.eye(10), sigma_noise=0.5)
    data = sample_dataset(theta, 200, seed=11)
    path = tmp_path / "data.csv"
    save_dataset(data, path, seed=11)
    return path


def test_test_subcommand_prints_outcome(data_csv, capsys):
    code = main(["test", "--data", str(data_csv), "--beta0", "1.0"])
    assert code == 0
    doc = json.loads(capsys.readouterr().out)
    assert set(doc) == {"beta_hat", "c_n", "reject", "ci_lower", "ci_upper"}
    assert doc["reject"] is False


def test_test_subcommand_with_config(data_csv, tmp_path, capsys):
    cfg_path = tmp_path / "space.json"
    cfg_path.write_text(SpaceConfig(M=3.0).to_json())
    code = main(["test", "--config", str(cfg_path), "--data", str(data_csv), "--beta0", "0.0"])
    assert code == 0
    json.loads(capsys.readouterr().out)


def test_ci_subcommand(data_csv, capsys):
    code = main(["ci", "--data", str(data_csv)])
    assert code == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["ci_lower"] <= doc["beta_hat"] <= doc["ci_upper"]
    assert doc["ci_upper"] - doc["ci_lower"] == pytest.approx(2 * doc["c_n"])


def test_run_subcommand_writes_artifacts(tmp_path, capsys):
    cfg = {
        "scenario": "size-power",
        "reps": 2,
        "grid": {"n": [40], "p": [6], "offset": [0.0]},
    }
    cfg_path = tmp_path / "exp.json"
    cfg_path.write_text(json.dumps(cfg))
    out = tmp_path / "res.csv"
    code = main(["run", "--config", str(cfg_path), "--seed", "5", "--out", str(out)])
    assert code == 0
    assert out.exists()
    assert out.with_suffix(".summary.json").exists()
    assert out.with_suffix(".png").exists()


def test_run_no_figures(tmp_path):
    out = tmp_path / "res.csv"
    cfg = {"scenario": "size-power", "reps": 2, "grid": {"n": [40], "p": [6], "offset": [0.0]}}
    cfg_path = tmp_path / "exp.json"
    cfg_path.write_text(json.dumps(cfg))
    code = main(["run", "--config", str(cfg_path), "--out", str(out), "--no-figures"])
    assert code == 0
    assert not out.with_suffix(".png").exists()


def test_run_threads_env_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv("DENSETEST_THREADS", "2")
    cfg = {"scenario": "size-power", "reps": 2, "grid": {"n": [40], "p": [6], "offset": [0.0]}}
    cfg_path = tmp_path / "exp.json"
    cfg_path.write_text(json.dumps(cfg))
    out = tmp_path / "res.csv"
    code = main(["run", "--config", str(cfg_path), "--out", str(out)])
    assert code == 0
    summary = json.loads(out.with_suffix(".summary.json").read_text())
    assert summary["threads_requested"] == 2


def test_run_requires_scenario_or_config():
    assert main(["run", "--seed", "1"]) == 1


def test_bad_config_exits_one(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["run", "--config", str(bad)]) == 1


def test_missing_data_exits_one(tmp_path):
    assert main(["test", "--data", str(tmp_path / "absent.csv"), "--beta0", "0"]) == 1


def test_lowerbound_verify_pass(tmp_path, capsys):
    cfg = {
        "scenario": "lowerbound-verify",
        "grid": {"det_draws": [20], "membership_reps": [2], "mixture_p": [7]},
    }
    cfg_path = tmp_path / "verify.json"
    cfg_path.write_text(json.dumps(cfg))
    out = tmp_path / "report.json"
    code = main(["lowerbound-verify", "--config", str(cfg_path), "--out", str(out)])
    assert code == 0
    assert json.loads(capsys.readouterr().out)["passed"] is True
    report = json.loads(out.read_text())
    assert report["passed"] is True


def test_lowerbound_verify_failure_exits_two(tmp_path, capsys):
    cfg = {
        "scenario": "lowerbound-verify",
        "grid": {
            "det_draws": [10],
            "membership_reps": [2],
            "mixture_p": [7],
            "_corrupt_determinant": [1e-3],
        },
    }
    cfg_path = tmp_path / "verify.json"
    cfg_path.write_text(json.dumps(cfg))
    out = tmp_path / "report.json"
    code = main(["lowerbound-verify", "--config", str(cfg_path), "--out", str(out), "--no-figures"])
    capsys.readouterr()
    assert code == 2


def test_lowerbound_verify_accepts_space_config(tmp_path, capsys):
    cfg_path = tmp_path / "space.json"
    cfg_path.write_text(SpaceConfig().to_json())
    out = tmp_path / "report.json"
    code = main(["lowerbound-verify", "--config", str(cfg_path), "--out", str(out), "--no-figures"])
    capsys.readouterr()
    assert code == 0
