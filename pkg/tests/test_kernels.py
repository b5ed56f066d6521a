import math

import numpy as np
import pytest

from akpzlab.errors import DomainError
from akpzlab.kernels import (
    KernelParams,
    c_form,
    increment_slope,
    kernel_K,
    kernel_K_array,
    orbit_sum,
    orbit_sums_exhaustive,
    sigma_Aminus_bound,
    sigma_energy,
    sigma_poisson_norm,
    sigma_variational,
    sigma_zero_mode,
)


def box(N):
    return [(a, b) for a in range(-N, N + 1) for b in range(-N, N + 1) if (a, b) != (0, 0)]


def sq(k):
    return k[0] ** 2 + k[1] ** 2


def pairs(k, N):
    """All (l, m) with l + m = k, both nonzero and inside the box."""
    for l in box(N):
        m = (k[0] - l[0], k[1] - l[1])
        if m != (0, 0) and max(abs(m[0]), abs(m[1])) <= N:
            yield l, m


def naive(k, N, weight):
    return math.fsum(weight(l, m) for l, m in pairs(k, N))


def energy_w(l, m):
    return c_form(l, m) ** 2 / (sq(m) * (sq(l) + sq(m)) ** 2)


def variational_w(l, m):
    return c_form(l, m) ** 2 / (sq(l) * sq(m) * (sq(l) + sq(m)))


def poisson_w(l, m):
    return c_form(l, m) ** 2 / (sq(l) * sq(m) * (sq(l) + sq(m)) ** 2)


def aminus_w(k):
    return lambda l, m: c_form(k, (-l[0], -l[1])) * c_form(l, m) / (sq(l) * (sq(l) + sq(m)))


def test_c_form_examples_and_symmetries():
    assert c_form((1, 0), (0, 1)) == 0
    assert c_form((1, 0), (1, 0)) == -1
    assert c_form((1, 1), (2, -1)) == -3
    rng = np.random.default_rng(0)
    for _ in range(50):
        l, m = (tuple(int(x) for x in rng.integers(-9, 10, 2)) for _ in range(2))
        assert c_form(l, m) == c_form(m, l)
        assert c_form(l, (-m[0], -m[1])) == -c_form(l, m)


def test_kernel_examples():
    p = KernelParams(N=2, lam=1.0)
    assert kernel_K((1, 0), (1, 0), p) == -2.0
    assert kernel_K((1, 0), (1, 0), KernelParams(N=1, lam=1.0)) == 0.0
    assert kernel_K((1, 0), (-1, 0), p) == 0.0
    with pytest.raises(DomainError):
        kernel_K((0, 0), (1, 0), p)


def test_kernel_symmetric_and_array_matches_scalar():
    N = 4
    p = KernelParams(N=N, lam=1.0)
    pts = box(N)
    rng = np.random.default_rng(1)
    for i in rng.integers(0, len(pts), 200):
        for j in rng.integers(0, len(pts), 3):
            l, m = pts[i], pts[j]
            assert kernel_K(l, m, p) == kernel_K(m, l, p)
            assert kernel_K_array(l[0], l[1], m[0], m[1], N) == pytest.approx(kernel_K(l, m, p), abs=1e-15)


def test_orbit_examples():
    p = KernelParams(N=4, lam=1.0)
    m, l = (1, 0), (0, 1)
    s = (-1, -1)
    terms = [kernel_K(m, l, p), kernel_K(s, l, p), kernel_K(m, s, p)]
    assert terms == pytest.approx([0.0, -1 / math.sqrt(2), 1 / math.sqrt(2)], abs=1e-15)
    assert orbit_sum(m, l, p) == pytest.approx(0.0, abs=1e-15)
    assert kernel_K((1, 1), (1, 1), p) == 0.0 and kernel_K((-2, -2), (1, 1), p) == 0.0
    assert orbit_sum((1, 1), (1, 1), p) == 0.0
    with pytest.raises(DomainError):
        orbit_sum((1, 0), (-1, 0), p)


def test_orbit_sums_vanish_exhaustively_at_six():
    sums, scales = orbit_sums_exhaustive(KernelParams(N=6, lam=1.0))
    assert len(sums) > 10_000
    assert np.all(np.abs(sums) <= 1e-12 * scales)


def test_scalar_orbit_sum_agrees_with_exhaustive_sample():
    p = KernelParams(N=3, lam=1.0)
    for m in box(3):
        for l in box(3):
            s = (-m[0] - l[0], -m[1] - l[1])
            if s != (0, 0):
                assert abs(orbit_sum(m, l, p)) <= 1e-14


@pytest.mark.parametrize("N,k", [(2, (1, 0)), (4, (1, 1)), (5, (2, -3)), (8, (1, 0)), (8, (3, 5))])
def test_sums_match_double_loop(N, k):
    for fn, w in ((sigma_energy, energy_w), (sigma_variational, variational_w),
                  (sigma_poisson_norm, poisson_w), (sigma_Aminus_bound, aminus_w(k))):
        assert fn(k, N) == pytest.approx(naive(k, N, w), rel=1e-14, abs=1e-15)


def test_zero_mode_sum():
    assert sigma_zero_mode(1) == 4.0
    for N in (2, 5, 8):
        ref = math.fsum((l[0] ** 2 - l[1] ** 2) ** 2 / sq(l) ** 3 for l in box(N))
        assert sigma_zero_mode(N) == pytest.approx(ref, rel=1e-14)
    with pytest.raises(DomainError):
        sigma_zero_mode(0)


def test_sum_domain_errors():
    with pytest.raises(DomainError):
        sigma_energy((0, 0), 4)
    with pytest.raises(DomainError):
        sigma_energy((5, 0), 4)


def test_energy_nondecreasing_in_cutoff():
    vals = [sigma_energy((1, 0), N) for N in range(1, 40)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_variational_is_twice_energy():
    # symmetrising the energy summand over l <-> m gives exactly half the variational summand
    for k, N in (((1, 0), 16), ((2, 1), 33), ((3, -4), 64)):
        assert sigma_variational(k, N) == pytest.approx(2 * sigma_energy(k, N), rel=1e-13)


def test_variational_coordinate_swap_symmetry():
    for N in (4, 9, 32):
        assert sigma_variational((1, 0), N) == sigma_variational((0, 1), N)
        assert sigma_energy((2, 1), N) == pytest.approx(sigma_energy((1, 2), N), rel=1e-14)


def test_aminus_invariant_under_coordinate_swap():
    # swapping coordinates flips c twice
    for k, N in (((1, 0), 8), ((2, 1), 16)):
        assert sigma_Aminus_bound(k, N) == pytest.approx(sigma_Aminus_bound((k[1], k[0]), N), rel=1e-13)


def test_aminus_grows_at_most_logarithmically():
    Ns = [2**j for j in range(6, 12)]
    r = [abs(sigma_Aminus_bound((1, 0), N)) / math.log(N) for N in Ns]
    assert max(r) / min(r) < 1.5
    assert abs(r[-1] - r[-2]) < 0.1 * r[-1]


def test_log_growth_trends():
    Ns = [2**j for j in range(6, 11)]
    e = [sigma_energy((1, 0), N) for N in Ns]
    z = [sigma_zero_mode(N) for N in Ns]
    assert increment_slope(Ns, e) == pytest.approx(math.pi / 4, rel=0.05)
    assert increment_slope(Ns, z) == pytest.approx(math.pi, rel=0.05)
    # doubling N adds about pi log 2
    assert z[-1] - z[-2] == pytest.approx(math.pi * math.log(2), rel=0.02)
    # ratios to log N decrease toward pi/4
    ratios = [v / math.log(N) for v, N in zip(e, Ns)]
    assert all(b < a for a, b in zip(ratios, ratios[1:])) and ratios[-1] > math.pi / 4


def test_limit_is_direction_independent():
    Ns = [2**j for j in range(5, 11)]
    d = [sigma_energy((3, 4), N) - sigma_energy((5, 0), N) for N in Ns]
    growth = sigma_energy((5, 0), Ns[-1]) - sigma_energy((5, 0), Ns[0])
    assert max(d) - min(d) < 0.05 * growth


def test_wolf_scaling():
    p = KernelParams.wolf(256, C=2.0, nu=3.0)
    assert p.lam / math.sqrt(p.nu) == pytest.approx(math.sqrt(2.0 / math.log(256)), rel=1e-15)
    assert p.scaling_mode == "wolf_scaling"
    assert p.with_cutoff(1024).lam == pytest.approx(KernelParams.wolf(1024, 2.0, 3.0).lam)
    with pytest.raises(DomainError):
        KernelParams.wolf(1)
    with pytest.raises(DomainError):
        KernelParams(N=4, lam=-1.0)
