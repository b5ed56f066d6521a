import csv
import json
import math

import numpy as np
import pytest

from akpzlab.config import convert, env_overrides, load_tolerances, read_run_config, tolerance, tolerance_version
from akpzlab.errors import ConfigError
from akpzlab.experiments.common import keyed_seed, sub_seeds
from akpzlab.experiments.report import ExperimentReport
from akpzlab.experiments.sampling import (
    cumulative_trapezoid,
    increment_squares,
    increment_sup,
    laplace_tail_horizon,
    laplace_window_samples,
    window_starts,
)
from akpzlab.stats import Estimate, batch_means, estimate, loglog_slope, ratio_estimate, verdict

# statistics


def test_batch_means_matches_iid_standard_error():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(40_000)
    m, se = batch_means(x, 40)
    assert m == pytest.approx(x.mean())
    assert se == pytest.approx(1 / math.sqrt(len(x)), rel=0.3)
    with pytest.raises(ValueError):
        batch_means(x, 10)
    with pytest.raises(ValueError):
        batch_means(x[:5], 20)


def test_batch_means_sees_correlation():
    rng = np.random.default_rng(1)
    x = np.repeat(rng.standard_normal(2000), 20)
    naive = x.std() / math.sqrt(len(x))
    assert batch_means(x, 20)[1] > 3 * naive


def test_ratio_estimate_and_verdict():
    rng = np.random.default_rng(2)
    den = 2 + rng.standard_normal(20_000) * 0.1
    num = 3 * den + rng.standard_normal(20_000) * 0.01
    r = ratio_estimate(num, den)
    assert r.within(3.0, 4)
    assert verdict(Estimate(1.0, 0.01, 10), 0.9, 1.1) == "pass"
    assert verdict(Estimate(1.2, 0.01, 10), 0.9, 1.1) == "fail"
    assert verdict(Estimate(1.0, 0.06, 10), 0.9, 1.1) == "inconclusive"
    assert Estimate(1.0, 0.0, 1).z(1.0) == 0.0 and Estimate(2.0, 0.5, 1).z(1.0) == 2.0
    assert estimate(np.ones(100)).value == 1.0


def test_loglog_slope_exact_power_law():
    x = np.array([1, 2, 4, 8, 16.0])
    s, e = loglog_slope(x, 3 * x**1.5)
    assert s == pytest.approx(1.5, rel=1e-12) and e < 1e-10
    s, e = loglog_slope(x, 3 * x**1.5, 0.01 * x**1.5)
    assert s == pytest.approx(1.5, rel=1e-12) and e > 0


# seeds


def test_keyed_seeds_are_distinct_and_stable():
    assert keyed_seed(5, 0, 8) == keyed_seed(5, 0, 8)
    assert len({keyed_seed(5, r, N) for r in range(4) for N in (4, 8, 16)}) == 12
    assert sub_seeds(3, 4) == sub_seeds(3, 4) and len(set(sub_seeds(3, 4))) == 4


# configuration


def test_packaged_tolerances():
    assert tolerance("A1", "orbit_rel") == 1e-12
    assert tolerance_version() >= 1
    with pytest.raises(ConfigError):
        tolerance("A1", "missing")


def test_tolerance_overlay(tmp_path):
    f = tmp_path / "tol.ini"
    f.write_text("[A5]\nrel = 0.1\n")
    assert load_tolerances(f).getfloat("A5", "rel") == 0.1
    f.write_text("[A5]\nnew_key = 1\n")
    with pytest.raises(ConfigError):
        load_tolerances(f)
    f.write_text("[A99]\nrel = 1\n")
    with pytest.raises(ConfigError):
        load_tolerances(f)


def test_run_config_reading(tmp_path):
    f = tmp_path / "run.ini"
    f.write_text("[run]\nseed = 7\n[verify]\nN = 5\nsuites = orbit, fft\n")
    allowed = {"run": {"seed": int}, "verify": {"N": int, "suites": (str,)}}
    assert read_run_config(f, allowed) == {"run": {"seed": 7}, "verify": {"N": 5, "suites": ("orbit", "fft")}}
    for text in ("[run]\nsede = 7\n", "[other]\nx = 1\n", "[run]\nseed = seven\n", "not an ini"):
        f.write_text(text)
        with pytest.raises(ConfigError):
            read_run_config(f, allowed)
    with pytest.raises(ConfigError):
        read_run_config(tmp_path / "absent.ini", allowed)


def test_convert_and_environment():
    assert convert("yes", bool, "x") is True and convert("off", bool, "x") is False
    assert convert("1, 2,3", (int,), "x") == (1, 2, 3)
    with pytest.raises(ConfigError):
        convert("maybe", bool, "x")
    env = {"AKPZ_SEED": "4", "AKPZ_OUT": "/tmp/o", "HOME": "/root"}
    assert env_overrides(env) == {"seed": "4", "out": "/tmp/o"}


# reports


def test_report_bundle_round_trips(tmp_path):
    rep = ExperimentReport("demo", seed=3, config={"Ns": (4, 8)})
    x = 0.1 + 0.2
    rep.add_estimate("ratio", Estimate(x, 1 / 3, 10), N=4)
    rep.add_estimate("plain", 2.5)
    rep.add_point("curve", 4, math.pi, 0.0, math.e)
    rep.set_check("A", True, "fine")
    rep.set_verdict("B", "inconclusive")
    assert not rep.passed
    paths = rep.write(tmp_path)
    data = json.loads(paths["json"].read_text())
    assert data["estimates"][0]["value"] == x and data["seed"] == 3
    assert data["verdicts"] == {"A": "pass", "B": "inconclusive"}
    with open(paths["estimates"]) as fh:
        rows = list(csv.DictReader(fh))
    assert rows[0]["value"] == format(x, ".17g") and float(rows[0]["value"]) == x
    assert rows[0]["N"] == "4" and rows[1]["N"] == ""
    with open(paths["plot"]) as fh:
        row = next(csv.DictReader(fh))
    assert float(row["y"]) == math.pi and float(row["target"]) == math.e
    assert rep.summary_lines() == ["demo:A: PASS  (fine)", "demo:B: INCONCLUSIVE"]


def test_report_json_handles_numpy_and_nonfinite():
    rep = ExperimentReport("np", config={"a": np.arange(3), "z": 1 + 2j, "inf": math.inf, "i": np.int64(4)})
    d = json.loads(rep.to_json())
    assert d["config"] == {"a": [0, 1, 2], "z": [1.0, 2.0], "inf": "inf", "i": 4}


# window estimators


def test_cumulative_trapezoid_integrates_linear_exactly():
    t = np.linspace(0, 1, 11)
    y = np.vstack([2 * t, np.ones_like(t)])
    np.testing.assert_allclose(cumulative_trapezoid(y, 0.1), np.vstack([t**2, t]), atol=1e-14)


def test_window_helpers():
    X = np.arange(10.0)[None] ** 2
    assert list(window_starts(10, 3, 2)) == [0, 2, 4, 6]
    sq = increment_squares(X, np.array([1, 2]), 3)
    np.testing.assert_array_equal(sq[:, 0], [(1 - 0) ** 2, (16 - 9) ** 2, (49 - 36) ** 2])
    np.testing.assert_array_equal(increment_sup(X, 2, 4), [4.0, 20.0])
    with pytest.raises(ConfigError):
        window_starts(5, 5, 1)


def test_laplace_tail_horizon():
    T = laplace_tail_horizon(2.0, 1e-3)
    assert math.exp(-2 * T) * (1 + 2 * T) == pytest.approx(1e-3, rel=1e-10)


def test_laplace_window_routes_agree_for_constant_signal():
    # F = c gives B(s+t)-B(s) = c t; both routes tend to 2 c^2 / rate
    dt, rate, c = 0.001, 2.0, 1.5
    lag = int(laplace_tail_horizon(rate, 1e-8) / dt)
    F = np.full((2, lag + 50), c)
    r1, r2 = laplace_window_samples(F, dt, rate, lag, stride=10)
    assert np.allclose(r1, 2 * c * c / rate, rtol=1e-5) and np.allclose(r2, 2 * c * c / rate, rtol=1e-5)
