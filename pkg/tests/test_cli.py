import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from hmmgap import birkhoff_tau, load_model
from hmmgap.cli import main
from conftest import THREE_STATE


@pytest.fixture()
def model_file(tmp_path):
    path = tmp_path / "model.json"
    path.write_text(json.dumps(THREE_STATE))
    return str(path)


def _run(*argv):
    return main(list(argv))


def test_sample_writes_output_and_manifest(model_file, tmp_path):
    out = tmp_path / "obs.txt"
    assert _run("sample", "--model", model_file, "-n", "500", "--seed", "3", "-o", str(out)) == 0
    values = np.loadtxt(out)
    assert values.shape == (500,)
    manifest = json.loads((tmp_path / "obs.txt.manifest.json").read_text())
    assert manifest["subcommand"] == "sample"
    assert manifest["seed"] == 3
    assert "model" in manifest["input_digests"]
    assert manifest["version"]


def test_sample_rerun_is_bit_identical(model_file, tmp_path):
    out1, out2 = tmp_path / "a.txt", tmp_path / "b.txt"
    _run("sample", "--model", model_file, "-n", "400", "--seed", "9", "-o", str(out1))
    _run("sample", "--model", model_file, "-n", "400", "--seed", "9", "-o", str(out2))
    assert out1.read_bytes() == out2.read_bytes()


def test_sample_binary_and_states(model_file, tmp_path):
    out = tmp_path / "obs.f64"
    states = tmp_path / "states.txt"
    _run("sample", "--model", model_file, "-n", "64", "--seed", "1", "-o", str(out),
         "--format", "f64", "--states", str(states))
    assert np.frombuffer(out.read_bytes(), dtype="<f8").shape == (64,)
    assert np.loadtxt(states, dtype=int).shape == (64,)


def test_filter_csv_output(model_file, tmp_path):
    obs = tmp_path / "obs.txt"
    out = tmp_path / "filter.csv"
    _run("sample", "--model", model_file, "-n", "50", "--seed", "2", "-o", str(obs))
    assert _run("filter", "--model", model_file, "--obs", str(obs), "-o", str(out)) == 0
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["step", "rho_1", "rho_2", "rho_3", "log_norm"]
    assert len(rows) == 52
    assert rows[-1][0] == "total"
    body = np.array([[float(v) for v in row[1:4]] for row in rows[1:-1]])
    assert np.abs(body.sum(axis=1) - 1.0).max() < 1e-12
    total = float(rows[-1][-1])
    assert total == pytest.approx(sum(float(r[-1]) for r in rows[1:-1]), rel=1e-10)


def test_filter_stream_json(model_file, tmp_path):
    obs = tmp_path / "obs.txt"
    out = tmp_path / "summary.json"
    _run("sample", "--model", model_file, "-n", "300", "--seed", "2", "-o", str(obs))
    assert _run("filter", "--model", model_file, "--obs", str(obs), "--stream",
                "-o", str(out)) == 0
    summary = json.loads(out.read_text())
    assert summary["n"] == 300
    assert np.isfinite(summary["log_likelihood"])


def test_gap_simulate_reproduces_demo_numbers(model_file, tmp_path):
    out = tmp_path / "gap.json"
    code = _run("gap", "--model", model_file, "--simulate", "10000", "7",
                "--epsilon", "1e-15", "-o", str(out))
    assert code == 0
    result = json.loads(out.read_text())
    assert -0.22 <= result["gap"] <= -0.17
    assert 170 <= result["buffer_length"] <= 190
    assert result["n"] == 10000
    assert result["tau_bound_log"] == pytest.approx(
        float(np.log(birkhoff_tau(load_model(model_file).transition))), rel=1e-12)


def test_gap_all_methods(model_file, tmp_path):
    out = tmp_path / "gap.json"
    assert _run("gap", "--model", model_file, "--simulate", "6000", "3",
                "--method", "all", "--trajectory-seqs", "30",
                "--trajectory-steps", "200", "-o", str(out)) == 0
    result = json.loads(out.read_text())
    assert set(result["all_gaps"]) == {"jacobian", "qr", "trajectory"}
    assert "qr_spectrum" in result
    spread = max(result["all_gaps"].values()) - min(result["all_gaps"].values())
    assert spread < 0.05


def test_tau_subcommand(model_file, tmp_path):
    out = tmp_path / "tau.json"
    assert _run("tau", "--model", model_file, "-o", str(out)) == 0
    result = json.loads(out.read_text())
    assert result["tau"] == pytest.approx(
        birkhoff_tau(load_model(model_file).transition), rel=1e-12)


def test_sync_demo_csv(model_file, tmp_path):
    out = tmp_path / "sync.csv"
    assert _run("sync-demo", "--model", model_file, "--seeds", "20", "--steps", "60",
                "--seed", "4", "-o", str(out)) == 0
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["seed", "step", "log_distance_over_n"]
    seeds = {row[0] for row in rows[1:]}
    assert "mean" in seeds and "0" in seeds and "19" in seeds
    mean_rows = [row for row in rows[1:] if row[0] == "mean"]
    assert len(mean_rows) == 60
    # normalized log distances head toward the forgetting rate
    assert float(mean_rows[-1][2]) < -0.1


def test_sync_demo_threads_match(model_file, tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    _run("sync-demo", "--model", model_file, "--seeds", "8", "--steps", "40",
         "--seed", "4", "-o", str(a))
    _run("sync-demo", "--model", model_file, "--seeds", "8", "--steps", "40",
         "--seed", "4", "--threads", "4", "-o", str(b))
    assert a.read_bytes() == b.read_bytes()


def test_infer_outputs(model_file, tmp_path):
    obs = tmp_path / "obs.txt"
    _run("sample", "--model", model_file, "-n", "4000", "--seed", "5", "-o", str(obs))
    out = tmp_path / "fit.json"
    trace = tmp_path / "trace.csv"
    code = _run("infer", "--model", model_file, "--obs", str(obs), "--free", "mu1,mu2",
                "--buffer", "60", "--batch", "25", "--steps-per-restart", "4",
                "--max-restarts", "2", "--restart-threshold", "1e-9",
                "--seed", "6", "--trace", str(trace), "-o", str(out))
    assert code == 0
    result = json.loads(out.read_text())
    assert set(result["theta_hat"]) == {"mu1", "mu2"}
    assert result["buffers"] == [60, 60]
    assert result["multiplies"] == result["multiplies_detail"]["total"]
    rows = list(csv.reader(trace.open()))
    assert rows[0] == ["restart", "step", "mu1", "mu2", "eta", "probe_loglik"]
    assert len(rows) == 1 + 8
    assert rows[1][-1] != ""
    assert rows[2][-1] == ""


def test_exit_code_validation_error(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"transition": [[0.4, 0.3], [0.5, 0.5]],
                               "means": [0, 1], "stds": [1, 1]}))
    assert _run("gap", "--model", str(bad), "--simulate", "2000", "1") == 1


def test_exit_code_missing_file(tmp_path):
    assert _run("filter", "--model", str(tmp_path / "nope.json"),
                "--obs", str(tmp_path / "nope.txt")) == 1


def test_unknown_flag_exits_one(model_file, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["gap", "--model", model_file, "--bogus"])
    assert exc.value.code == 1
    assert "usage" in capsys.readouterr().err


def test_console_script_version():
    out = subprocess.run([sys.executable, "-m", "hmmgap.cli", "--version"],
                         capture_output=True, text=True)
    assert out.returncode == 0
    assert "hmmgap" in out.stdout
