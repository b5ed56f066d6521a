"""Exact identity suites: orbit sums, Poisson residuals, adjointness, Gaussian integration by parts, FFT products."""

from __future__ import annotations

import numpy as np

from .chaos import (
    ChaosKernel,
    CylinderFunctional,
    adjointness_check,
    apply_Aminus,
    apply_Aplus,
    apply_L,
    apply_L0,
    evaluate,
    malliavin_derivative,
    nonlinearity_functional,
    poisson_solve_nonlinearity,
    poisson_solve_zero_mode,
    random_functional,
    wick_expectation,
    zero_mode_nonlinearity,
)
from .config import tolerance
from .dynamics import QuadraticProduct
from .errors import ConfigError
from .experiments.common import Timer
from .experiments.report import ExperimentReport
from .kernels import KernelParams, kernel_K_array, orbit_sums_exhaustive
from .spectral import TestFunction, embed_array, hermitize, white_noise_array


def random_test_function(rng: np.random.Generator, M: int, n_modes: int = 4) -> TestFunction:
    """Real trigonometric polynomial with ``n_modes`` random pairs ``+-k`` inside ``|k|_inf <= M``."""
    arr = np.zeros((2 * M + 1, 2 * M + 1), complex)
    for _ in range(n_modes):
        k = rng.integers(-M, M + 1, size=2)
        while not k.any():
            k = rng.integers(-M, M + 1, size=2)
        arr[k[0] + M, k[1] + M] += rng.standard_normal() + 1j * rng.standard_normal()
    out = hermitize(arr + np.conj(arr[::-1, ::-1]))
    out[M, M] = 0.0
    return TestFunction(out, check=False)


def _max_abs(F: CylinderFunctional) -> float:
    return max([abs(F.const)] + [float(np.max(np.abs(k.vals), initial=0.0)) for k in F.components.values()])


def orbit_suite(N: int, kernel=kernel_K_array) -> tuple[bool, str]:
    """Orbit sums over the full box, relative to the largest term of each orbit."""
    rel = tolerance("A1", "orbit_rel")
    if kernel is kernel_K_array:
        sums, scales = orbit_sums_exhaustive(KernelParams(N=N, lam=1.0))
    else:
        sums, scales = _orbit_sums_with(kernel, N)
    ratio = np.abs(sums) / np.where(scales > 0, scales, 1.0)
    worst = float(ratio.max())
    return worst <= rel, f"{len(sums)} orbits, max relative sum {worst:.2e}"


def _orbit_sums_with(kernel, N: int):
    r = np.arange(-N, N + 1)
    a1, a2, b1, b2 = (x.ravel() for x in np.meshgrid(r, r, r, r, indexing="ij"))
    s1, s2 = -a1 - b1, -a2 - b2
    keep = (
        ((a1 != 0) | (a2 != 0)) & ((b1 != 0) | (b2 != 0)) & ((s1 != 0) | (s2 != 0))
        & (np.abs(s1) <= N) & (np.abs(s2) <= N)
    )
    a1, a2, b1, b2, s1, s2 = (x[keep] for x in (a1, a2, b1, b2, s1, s2))
    t = [kernel(a1, a2, b1, b2, N), kernel(s1, s2, b1, b2, N), kernel(a1, a2, s1, s2, N)]
    return t[0] + t[1] + t[2], np.max(np.abs(np.stack(t)), axis=0)


def poisson_suite(N: int, n_random: int, rng: np.random.Generator) -> tuple[bool, str]:
    """``L0 H - lam N(phi)`` for random ``phi`` and the zero-mode analog, entrywise."""
    rel = tolerance("A2", "residual_rel")
    p = KernelParams(N=N, lam=0.7, nu=1.3)
    worst = 0.0
    for _ in range(n_random):
        phi = random_test_function(rng, min(N, 4))
        target = nonlinearity_functional(phi, p).scaled(p.lam)
        res = apply_L0(poisson_solve_nonlinearity(phi, p), p) - target
        worst = max(worst, _max_abs(res) / max(_max_abs(target), 1e-300))
    target = zero_mode_nonlinearity(p).scaled(p.lam)
    res = apply_L0(poisson_solve_zero_mode(p), p) - target
    worst = max(worst, _max_abs(res) / _max_abs(target))
    return worst <= rel, f"{n_random} test functions and the zero mode, max relative residual {worst:.2e}"


def adjointness_suite(n_pairs: int, rng: np.random.Generator, N: int = 4) -> tuple[bool, str]:
    """Adjointness of ``A+`` and ``-A-``, antisymmetry of ``A`` and ``E[L F] = 0`` on random functionals.

    Pairs are real functionals of degree <= 2; the stationarity check also uses
    degree-3 functionals with closed triples, whose double contraction must cancel.
    """
    rel = tolerance("A3", "rel")
    p = KernelParams(N=N, lam=0.9)
    momenta = [(1, 0), (0, 1), (1, 1), (-1, 2)]
    worst_adj, worst_anti, worst_mean = 0.0, 0.0, 0.0
    for _ in range(n_pairs):
        F = random_functional([1, 2], N, rng, nnz=6, momenta=momenta)
        G = random_functional([1, 2], N, rng, nnz=6, momenta=momenta)
        ApF, AmF = apply_Aplus(F, p), apply_Aminus(F, p)
        ApG, AmG = apply_Aplus(G, p), apply_Aminus(G, p)
        scale = np.sqrt(ApF.norm2() * G.norm2()) + np.sqrt(F.norm2() * AmG.norm2())
        worst_adj = max(worst_adj, abs(adjointness_check(F, G, p)) / max(scale, 1e-300))
        AF, AG = ApF + AmF, ApG + AmG
        anti = wick_expectation([AF, G.conj()]) + wick_expectation([F, AG.conj()])
        scale = np.sqrt(AF.norm2() * G.norm2()) + np.sqrt(F.norm2() * AG.norm2())
        worst_anti = max(worst_anti, abs(anti) / max(scale, 1e-300))
        H = random_functional([1, 2, 3], N, rng, nnz=6, momenta=[(0, 0), (1, 0)])
        LH = apply_L(H, p)
        worst_mean = max(worst_mean, abs(wick_expectation([LH])) / max(np.sqrt(LH.norm2()), 1e-300))
    ok = max(worst_adj, worst_anti, worst_mean) <= rel
    return ok, (f"{n_pairs} pairs, adjointness {worst_adj:.2e}, antisymmetry {worst_anti:.2e}, "
                f"mean of L F {worst_mean:.2e}")


def ibp_suite(n_random: int, rng: np.random.Generator, N: int = 3) -> tuple[bool, str]:
    """Gaussian integration by parts ``E[eta_k F] = E[D_k F]``."""
    rel = tolerance("A3", "rel")
    worst = 0.0
    for _ in range(n_random):
        F = random_functional([0, 1, 2, 3], N, rng, nnz=10)
        k = tuple(int(x) for x in rng.integers(-N, N + 1, size=2))
        if k == (0, 0):
            k = (1, 0)
        eta = CylinderFunctional(0.0, {1: ChaosKernel.from_dict(1, {(k,): 1.0})})
        lhs = wick_expectation([eta, F])
        rhs = malliavin_derivative(F, k).const
        worst = max(worst, abs(lhs - rhs) / max(np.sqrt(F.norm2()), 1e-300))
    return worst <= rel, f"{n_random} functionals, max relative gap {worst:.2e}"


def fft_suite(Ns, rng: np.random.Generator, batch: int = 4) -> tuple[bool, str]:
    """FFT products (both paddings) against direct convolution, for both nonlinearity kinds."""
    tol = tolerance("A11", "fft_abs")
    worst = 0.0
    for N in Ns:
        u = white_noise_array(N, rng, batch)
        for kind in ("u", "h"):
            ref = QuadraticProduct(N, "direct", kind)(u)
            scale = max(float(np.max(np.abs(ref))), 1.0)
            for mode in ("padding_2x", "padding_3_2"):
                got = QuadraticProduct(N, mode, kind)(u)
                worst = max(worst, float(np.max(np.abs(got - ref))) / scale)
    return worst <= tol, f"N in {list(Ns)}, max deviation {worst:.2e} (relative to the largest coefficient)"


def pairing_suite(Ns, rng: np.random.Generator, n_random: int = 5) -> tuple[bool, str]:
    """Chaos evaluation of ``N(phi)`` equals the simulator's ``sum_k N_k(u) conj(phi_k)``."""
    rel = tolerance("A11", "pairing_rel")
    worst = 0.0
    for N in Ns:
        p = KernelParams(N=N, lam=1.0)
        prod = QuadraticProduct(N, "padding_2x", "u")
        for _ in range(n_random):
            phi = random_test_function(rng, min(N, 3))
            u = white_noise_array(N, rng, 3)
            chaos_val = np.asarray(evaluate(nonlinearity_functional(phi, p), u))
            w = np.conj(embed_array(phi.coeffs, N))
            dyn = np.einsum("bij,ij->b", prod(u), w).real
            worst = max(worst, float(np.max(np.abs(chaos_val - dyn) / np.maximum(np.abs(dyn), 1.0))))
    return worst <= rel, f"max relative gap {worst:.2e}"


def verify_kernels(N: int = 8, seed: int = 0, suites=None, kernel=kernel_K_array) -> ExperimentReport:
    """Runs the exact identity suites; ``kernel`` replaces ``K`` in the orbit suite (mutation testing)."""
    if N < 1:
        raise ConfigError("verify-kernels needs N >= 1")
    names = ["orbit", "poisson", "adjointness", "ibp", "fft", "pairing"]
    suites = names if suites is None else list(suites)
    if not suites:
        raise ConfigError("no identity suites selected")
    unknown = set(suites) - set(names)
    if unknown:
        raise ConfigError(f"unknown suites {sorted(unknown)}; available: {', '.join(names)}")
    rng = np.random.default_rng(seed)
    rep = ExperimentReport("verify_kernels", seed=seed, config={"N": N, "suites": suites})
    small = [n for n in range(1, min(N, 8) + 1)]
    runners = {
        "orbit": lambda: orbit_suite(N, kernel),
        "poisson": lambda: poisson_suite(N, int(tolerance("A2", "n_random")), rng),
        "adjointness": lambda: adjointness_suite(int(tolerance("A3", "n_pairs")), rng),
        "ibp": lambda: ibp_suite(50, rng),
        "fft": lambda: fft_suite(small, rng),
        "pairing": lambda: pairing_suite(small[-3:], rng),
    }
    with Timer() as tm:
        for name in suites:
            with Timer() as t:
                ok, detail = runners[name]()
            rep.set_check(name, ok, f"{detail}; {t.elapsed:.2f} s")
            rep.add_estimate(f"{name}_seconds", t.elapsed)
    rep.runtime = tm.elapsed
    return rep
