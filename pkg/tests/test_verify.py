import numpy as np
import pytest

from akpzlab.errors import ConfigError
from akpzlab.kernels import kernel_K_array
from akpzlab.verify import random_test_function, verify_kernels


def test_default_suites_pass_quickly():
    rep = verify_kernels()
    assert rep.passed, rep.summary_lines()
    assert set(rep.verdicts) == {"orbit", "poisson", "adjointness", "ibp", "fft", "pairing"}
    assert rep.runtime < 60


def flipped_kernel(l1, l2, m1, m2, N):
    # sign error on half of the lattice, the kind of slip the orbit suite must catch
    K = kernel_K_array(l1, l2, m1, m2, N)
    return np.where(np.asarray(l1) > 0, -K, K)


def test_sign_mutation_is_caught():
    rep = verify_kernels(N=6, suites=["orbit"], kernel=flipped_kernel)
    assert rep.verdicts == {"orbit": "fail"}


def test_suite_selection_errors():
    with pytest.raises(ConfigError):
        verify_kernels(suites=[])
    with pytest.raises(ConfigError):
        verify_kernels(suites=["orbit", "bogus"])
    with pytest.raises(ConfigError):
        verify_kernels(N=0)


def test_random_test_function_is_real_and_mean_free():
    f = random_test_function(np.random.default_rng(0), 3)
    c = f.coeffs
    np.testing.assert_array_equal(c, np.conj(c[::-1, ::-1]))
    assert c[3, 3] == 0 and np.any(c)
