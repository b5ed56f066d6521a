"""Acceptance criteria A1-A12 at their stated tolerances and runtime budgets.

Each test prints one ``A<n>: PASS|FAIL`` line.  The full module takes about
three hours on one core; the stationary runs behind A7, A10 and A12 are shared
through the in-process series cache, so keep the file order.
"""

import os

import numpy as np
import pytest

from akpzlab.config import tolerance
from akpzlab.experiments import run_experiment
from akpzlab.experiments.common import Timer
from akpzlab.verify import adjointness_suite, fft_suite, orbit_suite, pairing_suite, poisson_suite

pytestmark = pytest.mark.slow

SEED = int(os.environ.get("AKPZ_SEED", "1"))
MINUTE = 60.0


@pytest.fixture
def report_line(capsys):
    def emit(criterion: str, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n{criterion}: {'PASS' if ok else 'FAIL'}  ({detail})")
    return emit


def check_suite(report_line, criterion, run, budget):
    with Timer() as t:
        ok, detail = run()
    fast = t.elapsed < budget
    report_line(criterion, ok and fast, f"{detail}; {t.elapsed:.1f} s of {budget:g} s")
    assert ok, detail
    assert fast, f"{t.elapsed:.1f} s exceeds {budget:g} s"


def check_experiment(report_line, criterion, name, verdicts, budget, **overrides):
    rep = run_experiment(name, overrides, seed=SEED)
    got = {v: rep.verdicts.get(v, "missing") for v in verdicts}
    ok = all(x == "pass" for x in got.values())
    fast = rep.runtime < budget
    parts = [f"{v}={got[v]}" + (f" [{rep.details[v]}]" if v in rep.details else "") for v in verdicts]
    report_line(criterion, ok and fast, "; ".join(parts) + f"; {rep.runtime / MINUTE:.1f} min")
    assert ok, rep.summary_lines()
    assert fast, f"{rep.runtime:.0f} s exceeds {budget:g} s"
    return rep


def test_A1_orbit_sums(report_line):
    check_suite(report_line, "A1", lambda: orbit_suite(int(tolerance("A1", "N"))), 10.0)


def test_A2_poisson_residual(report_line):
    rng = np.random.default_rng(SEED)
    N, n = int(tolerance("A2", "N")), int(tolerance("A2", "n_random"))
    check_suite(report_line, "A2", lambda: poisson_suite(N, n, rng), 10.0)


def test_A3_adjointness_and_stationarity(report_line):
    rng = np.random.default_rng(SEED)
    check_suite(report_line, "A3", lambda: adjointness_suite(int(tolerance("A3", "n_pairs")), rng), 30.0)


def test_A4_quadratic_variation_constant(report_line):
    check_experiment(report_line, "A4", "qv-limit",
                     ["deterministic_limit", "chaos_equals_sums", "pathwise_matches_sums"], 40 * MINUTE)


def test_A5_log_asymptotics(report_line):
    check_experiment(report_line, "A5", "log-asymptotics", ["sigma_energy", "sigma_zero_mode"], 10 * MINUTE)


def test_A6_white_noise_invariance(report_line):
    check_experiment(report_line, "A6", "invariance",
                     ["stationary_budget_0.25", "stationary_budget_0.125", "dt_halving_unchanged"], 120 * MINUTE)


def test_A7_laplace_sandwich(report_line):
    check_experiment(report_line, "A7", "laplace-sandwich", ["sandwich", "ou_closed_form"], 120 * MINUTE)


def test_A8_variational_lower_bound(report_line):
    check_experiment(report_line, "A8", "variational-bound",
                     ["term_I", "terms_bounded", "cg_dominates_line"], 30 * MINUTE)


def test_A9_zero_mode_nontrivial(report_line):
    check_experiment(report_line, "A9", "zero-mode", ["positive", "heat_baseline_zero"], 60 * MINUTE)


def test_A10_short_time_energy(report_line):
    check_experiment(report_line, "A10", "short-time-energy", ["slope"], 60 * MINUTE)


def test_A11_oracle_equivalence(report_line):
    rng = np.random.default_rng(SEED)

    def both():
        ok1, d1 = fft_suite(range(1, 9), rng)
        ok2, d2 = pairing_suite(range(1, 9), rng)
        return ok1 and ok2, f"fft: {d1}; pairing: {d2}"

    check_suite(report_line, "A11", both, 60.0)


def test_A12_energy_estimate_scaling(report_line):
    check_experiment(report_line, "A12", "energy-estimate", ["fixed_growth", "scaled_flat"], 120 * MINUTE)
