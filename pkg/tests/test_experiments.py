import pytest

from akpzlab.errors import ConfigError
from akpzlab.experiments import REGISTRY, option_types, resolve, run_experiment
from akpzlab.experiments.common import clear_cache
from akpzlab.experiments.laplace import ou_laplace_regression

TINY = {
    "qv-limit": dict(Ns=(64, 128, 256), chaos_Ns=(4,), mc_Ns=(4,), mc_traj=200, var_Ns=(4, 8)),
    "log-asymptotics": dict(Ns=(256, 512, 1024)),
    "invariance": dict(Ns=(4,), n_traj=400, sub_batch=200, n_records=2),
    "laplace-sandwich": dict(Ns=(4,), rates=(2.0,), n_traj=20, T=8.0, cg_max_N=4, refine_Ns=(4,), ou_check=False),
    "variational-bound": dict(N_first=64, term_Ns=(4, 8), cg_Ns=(4,)),
    "zero-mode": dict(Ns=(4,), scale_Ns=(16, 32, 64)),
    "short-time-energy": dict(Ns=(4,), n_traj=20, T=2.0, n_lags=4, contrast_N=4),
    "energy-estimate": dict(Ns=(4, 8), n_traj=20, wolf_T=2.0, fixed_T=1.0),
    "she-cherry": dict(Ns=(8, 16), mc_N=4, mc_traj=200, norm_Ns=(4, 8, 16)),
}

# criteria that are exact identities and must pass even on tiny grids
EXACT = {
    "qv-limit": ["chaos_equals_sums", "pathwise_matches_sums"],
    "laplace-sandwich": ["sandwich"],
    "variational-bound": ["cg_dominates_line", "terms_bounded"],
    "zero-mode": ["heat_baseline_zero"],
    "she-cherry": ["boundary_vanishes"],
}


def test_every_experiment_has_a_tiny_case():
    assert set(TINY) == set(REGISTRY)


@pytest.mark.parametrize("name", sorted(REGISTRY))
def test_tiny_run_is_reproducible(name):
    clear_cache()
    a = run_experiment(name, TINY[name], seed=3)
    clear_cache()
    b = run_experiment(name, TINY[name], seed=3)
    assert a.verdicts and a.verdicts == b.verdicts
    assert a.estimates == b.estimates
    assert all(v in ("pass", "fail", "inconclusive") for v in a.verdicts.values())
    for crit in EXACT.get(name, []):
        assert a.verdicts[crit] == "pass", a.summary_lines()


def test_option_types_and_resolution():
    types = option_types("qv-limit")
    assert types["Ns"] == (int,) and types["mc_traj"] is int and types["budget"] is float
    assert "seed" not in types and "phi" not in types
    assert option_types("short-time-energy")["lam_zero"] is bool
    assert resolve("log-asymptotics", {"Ns": (8, 16)})["Ns"] == (8, 16)
    with pytest.raises(ConfigError):
        resolve("log-asymptotics", {"bogus": 1})
    with pytest.raises(ConfigError):
        resolve("laplace-sandwich", {"rates": ()})
    with pytest.raises(ConfigError):
        run_experiment("nope")


def test_growth_fit_needs_two_cutoffs():
    with pytest.raises(ConfigError):
        run_experiment("energy-estimate", {"Ns": (8,)}, seed=0)


def test_zero_coupling_short_circuits():
    for name in ("short-time-energy", "energy-estimate"):
        rep = run_experiment(name, {**TINY[name], "lam_zero": True}, seed=0)
        assert set(rep.verdicts.values()) == {"inconclusive"}


def test_heat_laplace_regression_matches_closed_form():
    for rate, e1, e2, exact in ou_laplace_regression((0.5, 2.0), 200, 25.0, seed=7, tail=1e-3):
        assert exact == pytest.approx(2 / (rate + 1))
        assert e1.within(exact, 4) and e2.within(exact, 4)
