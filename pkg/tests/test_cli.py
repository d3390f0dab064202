import csv
import json
import math
import subprocess
import sys
from pathlib import Path

import pytest

from ghzcavity.cli import EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_NUMERIC, EXIT_OK, run, sweep_columns

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def load(name):
    return json.loads((CONFIGS / name).read_text())


def write(tmp_path, d, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(d, indent=2))
    return str(p)


def report(out):
    return json.loads((Path(out) / "report.json").read_text())


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_calibrate_operating_point(tmp_path):
    assert run(["calibrate", "--config", str(CONFIGS / "six_qubit.json"), "--out", str(tmp_path)]) == EXIT_OK
    doc = report(tmp_path)
    assert doc["lambda_over_g"] == pytest.approx(0.022, abs=5e-4)
    assert doc["schedule"]["tau_g_over_pi"] == pytest.approx(46.6, abs=0.1)
    assert doc["schedule"]["tau_s"] == pytest.approx(0.106e-6, abs=0.005e-6)
    assert doc["schedule"]["durations_s"]["1b"] == pytest.approx(1.136e-9, rel=1e-3)
    assert len(doc["calibration"]["qubits"]) == 5
    assert doc["worst_flag"] in ("pass", "warn", "fail")


def test_calibrate_idempotent(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(["calibrate", "--config", str(CONFIGS / "three_qubit_search.json"), "--out", str(a)]) == EXIT_OK
    assert run(["calibrate", "--config", str(a / "config.json"), "--out", str(b)]) == EXIT_OK
    assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()
    assert (a / "config.json").read_bytes() == (b / "config.json").read_bytes()


def test_calibrate_delta_too_large(tmp_path, capsys):
    d = load("six_qubit.json")
    d["calibration"]["delta_over_g"] = 3.0
    assert run(["calibrate", "--config", write(tmp_path, d), "--out", str(tmp_path / "o")]) == EXIT_INFEASIBLE
    err = capsys.readouterr().err
    assert "pulse_detuning" in err and "[2, 3, 4, 5, 6]" in err


def test_search_infeasible_names_binding(tmp_path, capsys):
    d = load("three_qubit_search.json")
    d["device"]["spectators"][0]["cavity_detuning_over_g_j"] = 10.0
    assert run(["calibrate", "--config", write(tmp_path, d), "--out", str(tmp_path / "o")]) == EXIT_INFEASIBLE
    assert "infeasible calibration" in capsys.readouterr().err


def test_config_error_exit(tmp_path, capsys):
    d = load("six_qubit.json")
    d["protocol"]["unknown"] = 1
    assert run(["simulate", "--config", write(tmp_path, d), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "protocol.unknown" in capsys.readouterr().err
    assert run(["simulate", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_simulate_closed_form(tmp_path):
    assert run(["simulate", "--config", str(CONFIGS / "six_qubit.json"), "--out", str(tmp_path)]) == EXIT_OK
    doc = report(tmp_path)
    assert doc["fidelity"]["F_numeric"] == pytest.approx(1.0, abs=1e-12)
    rows = read_csv(tmp_path / "trace.csv")
    assert rows[0] == ["segment", "time_s", "observable", "value_probability"]
    times = {}
    for seg, t, lab, _ in rows[1:]:
        if lab == "norm":
            times.setdefault(seg, []).append(float(t))
    assert set(times) == {"start", "1a", "1b", "1c", "2", "3c", "3b", "3a"}
    for ts in times.values():
        assert ts == sorted(ts)


def test_simulate_full_three_qubits(tmp_path):
    assert run(["simulate", "--config", str(CONFIGS / "three_qubit_search.json"), "--out", str(tmp_path)]) == EXIT_OK
    fid = report(tmp_path)["fidelity"]
    assert fid["F_difference"] <= 0.01
    assert fid["leakage"]["photon_ge2_max"] < 1e-4


def test_simulate_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run(["simulate", "--config", str(CONFIGS / "two_qubit_cavity_loss.json"), "--out", str(out),
                    "--mode", "full"]) == EXIT_OK
    assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()
    assert (a / "trace.csv").read_bytes() == (b / "trace.csv").read_bytes()
    assert report(a)["mode"] == "full"


def test_sweep_empty(tmp_path):
    assert run(["sweep", "--config", str(CONFIGS / "two_qubit_cavity_loss.json"), "--out", str(tmp_path),
                "--axis", "protocol.rabi_r_over_g", "--values", ""]) == EXIT_OK
    rows = read_csv(tmp_path / "sweep.csv")
    assert rows == [["value", *sweep_columns(2)]]


def test_sweep_unknown_axis(tmp_path):
    assert run(["sweep", "--config", str(CONFIGS / "two_qubit_cavity_loss.json"), "--out", str(tmp_path),
                "--axis", "protocol.nothing", "--values", "1"]) == EXIT_CONFIG
    assert run(["sweep", "--config", str(CONFIGS / "two_qubit_cavity_loss.json"), "--out", str(tmp_path),
                "--axis", "protocol.mode", "--values", "1"]) == EXIT_CONFIG
    assert run(["sweep", "--config", str(CONFIGS / "two_qubit_cavity_loss.json"), "--out", str(tmp_path),
                "--axis", "protocol.rabi_r_over_g", "--values", "a,b"]) == EXIT_CONFIG


def _column(path, name):
    rows = read_csv(path)
    k = rows[0].index(name)
    return [float(r[0]) for r in rows[1:]], [float(r[k]) for r in rows[1:]]


def test_sweep_ratio_convergence(tmp_path):
    axis = "device.spectators.*.cavity_detuning_over_g_j,calibration.margins.*"
    assert run(["sweep", "--config", str(CONFIGS / "two_qubit_cavity_loss.json"), "--out", str(tmp_path),
                "--axis", axis, "--values", "40,5,20,10"]) == EXIT_OK
    values, err = _column(tmp_path / "sweep.csv", "eff_vs_full_error")
    assert values == [5, 10, 20, 40]
    assert all(a > b for a, b in zip(err, err[1:])), err


def test_sweep_parallel_matches_serial(tmp_path):
    d = load("two_qubit_cavity_loss.json")
    d["protocol"]["jc_during_pulses"] = True
    cfg = write(tmp_path, d)
    args = ["--axis", "protocol.rabi_r_over_g,protocol.rabi_r_tilde_over_g", "--values", "5,10"]
    assert run(["sweep", "--config", cfg, "--out", str(tmp_path / "s"), *args]) == EXIT_OK
    assert run(["sweep", "--config", cfg, "--out", str(tmp_path / "p"), "--jobs", "2", *args]) == EXIT_OK
    assert (tmp_path / "s" / "sweep.csv").read_bytes() == (tmp_path / "p" / "sweep.csv").read_bytes()


def _small_noise(tmp_path, **noise):
    d = load("two_qubit_cavity_loss.json")
    d["noise"].update(noise)
    return d


def test_noise_zero_rates_matches_simulate(tmp_path):
    d = _small_noise(tmp_path, n_traj=5)
    d["device"]["quality_factor"] = "inf"
    cfg = write(tmp_path, d)
    assert run(["noise", "--config", cfg, "--out", str(tmp_path / "n")]) == EXIT_OK
    assert run(["simulate", "--config", cfg, "--out", str(tmp_path / "s")]) == EXIT_OK
    noisy = report(tmp_path / "n")
    assert noisy["total"]["mean"] == report(tmp_path / "s")["fidelity"]["F_numeric"]
    assert noisy["total"]["stderr"] == 0
    assert noisy["attribution"] == {}


def test_noise_report_and_determinism(tmp_path):
    d = _small_noise(tmp_path, n_traj=60)
    d["device"]["gamma_2r_per_s"] = 2e6
    cfg = write(tmp_path, d)
    for out in ("a", "b"):
        assert run(["noise", "--config", cfg, "--out", str(tmp_path / out)]) == EXIT_OK
    assert (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "b" / "report.json").read_bytes()
    doc = report(tmp_path / "a")
    assert set(doc["attribution"]) == {"cavity.decay", "q1.relax_2"}
    assert doc["dominant_channel"] == "cavity.decay"
    assert doc["channels"]["cavity.decay"]["rate_per_s"] == pytest.approx(2 * math.pi * 3e9 / 5e4)
    assert 0 < 1 - doc["total"]["mean"] < 0.1
    assert run(["noise", "--config", cfg, "--out", str(tmp_path / "c"), "--seed", "99"]) == EXIT_OK
    assert report(tmp_path / "c")["config"]["seed"] == 99


def test_noise_insufficient_trajectories(tmp_path, capsys):
    d = _small_noise(tmp_path, n_traj=20, max_stderr=1e-9)
    d["device"]["quality_factor"] = 500.0
    assert run(["noise", "--config", write(tmp_path, d), "--out", str(tmp_path / "o")]) == EXIT_NUMERIC
    assert "insufficient trajectories" in capsys.readouterr().err


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "ghzcavity", "calibrate", "--config", str(CONFIGS / "six_qubit.json"),
         "--out", str(tmp_path)], capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "report.json").exists()
    bad = subprocess.run([sys.executable, "-m", "ghzcavity", "simulate"], capture_output=True, text=True)
    assert bad.returncode == 2
