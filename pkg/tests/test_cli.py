import csv
import json

import pytest

from akpzlab.cli import main
from akpzlab.experiments.asymptotics import TRUNCATION_MARKER


def run_cli(argv, env=None):
    return main(argv, environ={} if env is None else env)


def test_verify_kernels_passes_and_writes_report(tmp_path, capsys):
    rc = run_cli(["verify-kernels", "--seed", "5", "--out", str(tmp_path)])
    out = capsys.readouterr().out
    assert rc == 0
    assert "verify_kernels:orbit: PASS" in out and "seed 5" in out
    data = json.loads((tmp_path / "verify_kernels.json").read_text())
    assert data["seed"] == 5 and all(v == "pass" for v in data["verdicts"].values())


def test_generated_seed_is_recorded(tmp_path, capsys):
    ini = tmp_path / "c.ini"
    ini.write_text("[verify]\nsuites = fft\n")
    assert run_cli(["verify-kernels", "--config", str(ini), "--out", str(tmp_path)]) == 0
    seed = json.loads((tmp_path / "verify_kernels.json").read_text())["seed"]
    assert isinstance(seed, int) and f"seed {seed}" in capsys.readouterr().out


def test_settings_priority(tmp_path, capsys):
    ini = tmp_path / "c.ini"
    ini.write_text("[run]\nseed = 1\nthreads = 2\n[verify]\nN = 3\n")
    env = {"AKPZ_SEED": "2", "AKPZ_CONFIG": str(ini)}
    assert run_cli(["verify-kernels", "--dry-run"], env) == 0
    plan = json.loads(capsys.readouterr().out)
    assert plan["run"]["seed"] == 2 and plan["run"]["threads"] == 2 and plan["options"]["N"] == 3
    assert run_cli(["verify-kernels", "--dry-run", "--seed", "3", "--N", "4"], env) == 0
    plan = json.loads(capsys.readouterr().out)
    assert plan["run"]["seed"] == 3 and plan["options"]["N"] == 4


@pytest.mark.parametrize("argv,text", [
    (["experiment", "no-such-thing"], "available"),
    (["verify-kernels", "--bogus"], ""),
    (["frobnicate"], ""),
    (["verify-kernels", "--threads", "0"], "threads"),
    (["verify-kernels", "--config", "/nonexistent.ini"], "not found"),
])
def test_usage_errors_exit_two(argv, text, capsys):
    assert run_cli(argv) == 2
    assert text in capsys.readouterr().err


def test_malformed_config_exits_two(tmp_path):
    ini = tmp_path / "bad.ini"
    for text in ("[verify]\nNN = 3\n", "[run]\nseed = abc\n", "garbage", "[qv-limit]\nmc_traj = 5\n"):
        ini.write_text(text)
        assert run_cli(["verify-kernels", "--config", str(ini)]) == 2
    ini.write_text("[qv-limit]\nbogus = 5\n")
    assert run_cli(["experiment", "qv-limit", "--config", str(ini), "--dry-run"]) == 2
    ini.write_text("[log-asymptotics]\nNs =\n")
    assert run_cli(["experiment", "log-asymptotics", "--config", str(ini), "--dry-run"]) == 2


def test_failed_criterion_exits_one(tmp_path):
    # a grid this small cannot resolve the logarithmic coefficients
    ini = tmp_path / "c.ini"
    ini.write_text("[log-asymptotics]\nNs = 2, 4, 8\n")
    assert run_cli(["experiment", "log-asymptotics", "--config", str(ini), "--out", str(tmp_path)]) == 1


def test_experiment_passes_and_writes_bundle(tmp_path):
    ini = tmp_path / "c.ini"
    ini.write_text("[log-asymptotics]\nNs = 256, 512, 1024, 2048\n")
    assert run_cli(["experiment", "log-asymptotics", "--config", str(ini), "--out", str(tmp_path), "--seed", "0"]) == 0
    for name in ("log_asymptotics.json", "log_asymptotics_estimates.csv", "log_asymptotics_plot.csv"):
        assert (tmp_path / name).exists()


def test_asymptotics_resume_gives_identical_table(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    base = ["asymptotics", "--max-N", "2048"]
    env = {"AKPZ_OUT": str(a)}
    assert run_cli(base + ["--max-seconds", "0"], env) == 1
    text = (a / "asymptotics.csv").read_text()
    assert TRUNCATION_MARKER in text
    assert run_cli(base, env) == 0
    assert run_cli(base + ["--out", str(b)]) == 0
    resumed = (a / "asymptotics.csv").read_text()
    assert TRUNCATION_MARKER not in resumed
    assert resumed == (b / "asymptotics.csv").read_text()
    rows = list(csv.DictReader(resumed.splitlines()))
    assert [int(r["N"]) for r in rows] == [256, 512, 1024, 2048]
    assert "asymptotics:sigma_zero_mode: PASS" in capsys.readouterr().out


def test_asymptotics_empty_grid(tmp_path):
    assert run_cli(["asymptotics", "--max-N", "100", "--out", str(tmp_path)]) == 2


def test_simulate_and_resume(tmp_path):
    ini = tmp_path / "c.ini"
    ini.write_text("[simulate]\nN = 4\nT = 0.125\nbatch = 2\ncheckpoint_every = 4\n")
    out = tmp_path / "o"
    assert run_cli(["simulate", "--config", str(ini), "--seed", "9", "--out", str(out)]) == 0
    first = json.loads((out / "simulation.json").read_text())
    assert first["seed"] == 9 and first["completed"] and first["n_steps"] == 8
    assert (out / "checkpoint.npz").exists()
    assert run_cli(["simulate", "--config", str(ini), "--seed", "9", "--out", str(out), "--resume"]) == 0
    again = json.loads((out / "simulation.json").read_text())
    assert again["final_energy"] == first["final_energy"]


def test_simulate_rejects_unstable_budget(tmp_path):
    ini = tmp_path / "c.ini"
    ini.write_text("[simulate]\nbudget = 5\n")
    assert run_cli(["simulate", "--config", str(ini), "--out", str(tmp_path)]) == 2
