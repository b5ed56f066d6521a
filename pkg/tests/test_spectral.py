import math

import numpy as np
import pytest

from akpzlab.errors import DomainError
from akpzlab.spectral import (
    FourierField,
    TestFunction,
    besov_norm,
    dyadic_blocks,
    frac_laplacian,
    half_mask,
    hermitian_defect,
    knorm2,
    lattice,
    project,
    sample_gff,
    sample_white_noise,
    sobolev_norm,
    white_noise_array,
)


def random_field(M, seed=0, zero_mode=0.0):
    rng = np.random.default_rng(seed)
    f = sample_white_noise(M, rng)
    c = f.coeffs.copy()
    c[M, M] = zero_mode
    return FourierField(c)


def test_white_noise_second_moments():
    rng = np.random.default_rng(11)
    n, M = 100_000, 2
    z = white_noise_array(M, rng, n)
    c = M
    a, b = z[:, c + 1, c], z[:, c, c + 2]
    m = np.mean(np.abs(a) ** 2)
    assert abs(m - 1) <= 3 * np.std(np.abs(a) ** 2) / math.sqrt(n)
    # k + l != 0: both E[eta_k eta_l] and E[eta_k eta_k] vanish
    for prod in (a * b, a * a, a * np.conj(b)):
        assert abs(prod.mean()) <= 4 * np.std(prod) / math.sqrt(n)
    # real and imaginary parts carry variance 1/2 each
    assert abs(np.var(a.real) - 0.5) < 0.01 and abs(np.var(a.imag) - 0.5) < 0.01


def test_white_noise_is_hermitian_with_zero_mean_mode():
    f = sample_white_noise(5, np.random.default_rng(0))
    assert hermitian_defect(f.coeffs) == 0.0
    assert f.zero_mode == 0.0
    for k in [(1, 0), (2, -3), (5, 5)]:
        assert f.coeff(k) == np.conj(f.coeff((-k[0], -k[1])))


def test_invalid_cutoff():
    with pytest.raises(DomainError):
        white_noise_array(0, np.random.default_rng(0))


def test_gff_variances():
    rng = np.random.default_rng(3)
    M, n = 4, 20_000
    v = np.array([np.abs(sample_gff(M, rng).coeffs) ** 2 for _ in range(n)])
    for k, target in (((1, 0), 1.0), ((3, 4), 1 / 25), ((1, 1), 0.5)):
        if max(map(abs, k)) > M:
            continue
        s = v[:, k[0] + M, k[1] + M]
        assert abs(s.mean() - target) <= 4 * s.std() / math.sqrt(n)
    assert sample_gff(5, rng).zero_mode == 0.0


def test_gff_exact_mode_scaling():
    rng1, rng2 = np.random.default_rng(5), np.random.default_rng(5)
    w, g = sample_white_noise(5, rng1), sample_gff(5, rng2)
    assert g.coeff((3, 4)) == pytest.approx(w.coeff((3, 4)) / 5, rel=1e-15)
    assert g.coeff((1, 0)) == pytest.approx(w.coeff((1, 0)), rel=1e-15)


def test_gff_half_laplacian_gives_unit_variances():
    rng = np.random.default_rng(8)
    M, n = 3, 5000
    v = np.array([np.abs(frac_laplacian(sample_gff(M, rng), 0.5).coeffs) ** 2 for _ in range(n)])
    v = v[:, knorm2(M) > 0]
    z = (v.mean(axis=0) - 1) / (v.std(axis=0) / math.sqrt(n))
    assert np.max(np.abs(z)) < 4.5


def test_project():
    f = random_field(6)
    p = project(f, 3)
    assert np.array_equal(project(p, 3).coeffs, p.coeffs)
    assert project(f, 6) is f and project(f, 9) is f
    k1, k2 = lattice(6)
    outside = np.maximum(np.abs(k1), np.abs(k2)) > 3
    assert np.all(p.coeffs[outside] == 0) and np.array_equal(p.coeffs[~outside], f.coeffs[~outside])
    single = FourierField.from_modes(5, {(4, 0): 1.0})
    assert not np.any(project(single, 3).coeffs)


def test_frac_laplacian_examples():
    f = random_field(4)
    assert frac_laplacian(f, 0) is f
    back = frac_laplacian(frac_laplacian(f, 0.5), -0.5)
    np.testing.assert_allclose(back.coeffs, f.coeffs, rtol=1e-14, atol=1e-15)
    one = FourierField.from_modes(2, {(1, 1): 1.0 + 2.0j})
    assert frac_laplacian(one, 1.0).coeff((1, 1)) == pytest.approx(2 * (1 + 2j), rel=1e-15)
    with pytest.raises(DomainError):
        frac_laplacian(random_field(3, zero_mode=1.0), -0.5)


def test_frac_laplacian_composition_and_commutation():
    f = random_field(5, seed=2)
    a = frac_laplacian(frac_laplacian(f, 0.3), 0.45)
    np.testing.assert_allclose(a.coeffs, frac_laplacian(f, 0.75).coeffs, rtol=1e-13)
    np.testing.assert_allclose(
        project(frac_laplacian(f, 0.7), 3).coeffs, frac_laplacian(project(f, 3), 0.7).coeffs, rtol=1e-14
    )
    assert hermitian_defect(frac_laplacian(f, 0.7).coeffs) == 0.0


def test_sobolev_norm_examples():
    assert sobolev_norm(TestFunction.mode_pair((1, 0)), 1.0) ** 2 == pytest.approx(2.0, rel=1e-15)
    assert TestFunction.mode_pair((1, 0)).h1_norm ** 2 == pytest.approx(2.0, rel=1e-15)
    assert sobolev_norm(FourierField.zeros(3), 1.0) == 0.0
    f = random_field(4, seed=4)
    direct = sum(abs(f.coeff((a, b))) ** 2 for a in range(-4, 5) for b in range(-4, 5) if (a, b) != (0, 0))
    assert sobolev_norm(f, 0.0) ** 2 == pytest.approx(direct, rel=1e-13)


def test_sobolev_half_laplacian_shift():
    f = random_field(6, seed=5)
    for alpha in (-1.0, 0.0, 0.5, 1.0):
        assert sobolev_norm(frac_laplacian(f, 0.5), alpha) == pytest.approx(sobolev_norm(f, alpha + 1), rel=1e-12)


def test_inhomogeneous_norm_counts_zero_mode():
    f = FourierField.from_modes(2, {(1, 0): 1.0}, zero_mode=3.0)
    assert sobolev_norm(f, 1.0, homogeneous=False) ** 2 == pytest.approx(9 + 2 * 2)


def test_besov_single_mode_in_one_block():
    M = 8
    for k in [(1, 0), (2, 1), (5, 3)]:
        f = FourierField.from_modes(M, {k: 1.0})
        j = int(math.floor(math.log2(math.hypot(*k))))
        hits = [jj for jj, mask in dyadic_blocks(M) if np.any(f.coeffs[mask])]
        assert hits == [j]


def test_besov_homogeneity():
    f = random_field(6, seed=6)
    g = FourierField(-3.5 * f.coeffs)
    assert besov_norm(g, -1.0) == pytest.approx(3.5 * besov_norm(f, -1.0), rel=1e-12)


def test_besov_white_noise_regularity_threshold():
    rng = np.random.default_rng(1)
    n = 20
    stats = {}
    for a in (-1.1, -0.9):
        for M in (32, 64, 128):
            v = [besov_norm(sample_white_noise(M, rng), a, oversample=2) for _ in range(n)]
            stats[a, M] = (np.mean(v), np.std(v) / math.sqrt(n))
    below = [stats[-1.1, M][0] for M in (32, 64, 128)]
    assert max(below) / min(below) < 1.15
    above = [stats[-0.9, M] for M in (32, 64, 128)]
    for (m0, s0), (m1, s1) in zip(above, above[1:]):
        assert m1 - m0 > 3 * math.hypot(s0, s1)


def test_binary_round_trip_is_complex64_half_lattice():
    f = random_field(3, seed=9, zero_mode=0.25)
    data = f.to_bytes()
    g = FourierField.from_bytes(data)
    assert g.M == 3 and g.zero_mode == 0.25
    np.testing.assert_allclose(g.coeffs, f.coeffs, rtol=1e-6)
    # fixed-size header followed by one complex64 per half-lattice mode
    header = len(data) - 8 * int(half_mask(3).sum())
    assert len(random_field(5).to_bytes()) == header + 8 * int(half_mask(5).sum())
    with pytest.raises(DomainError):
        FourierField.from_bytes(b"xx")


def test_json_round_trip_exact():
    f = random_field(2, seed=10, zero_mode=-1.5)
    g = FourierField.from_json(f.to_json())
    np.testing.assert_array_equal(g.coeffs, f.coeffs)


def test_non_hermitian_rejected():
    c = np.zeros((3, 3), complex)
    c[2, 1] = 1.0
    with pytest.raises(DomainError):
        FourierField(c)
