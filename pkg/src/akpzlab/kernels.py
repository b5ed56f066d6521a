"""Nonlinearity kernels, their symmetry identities and the log-divergent lattice sums.

The quadratic kernel of the anisotropic nonlinearity in the u-variables is

    K_{l,m} = |l+m| c(l,m) / (|l||m|),    c(l,m) = l2 m2 - l1 m1,

cut off to ``|l|_inf, |m|_inf, |l+m|_inf <= N``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Literal

import numba
import numpy as np

from .errors import DomainError

Wavenumber = tuple[int, int]
ScalingMode = Literal["fixed", "wolf_scaling"]


@dataclass(frozen=True)
class KernelParams:
    """Cutoff ``N``, coupling ``lam``, viscosity ``nu`` and scaling constant ``C``."""

    N: int
    lam: float
    nu: float = 1.0
    C: float = 1.0
    scaling_mode: ScalingMode = "fixed"

    def __post_init__(self) -> None:
        if self.N < 1:
            raise DomainError("cutoff N must be >= 1")
        if self.nu <= 0 or self.C <= 0 or self.lam < 0:
            raise DomainError("need nu > 0, C > 0 and lam >= 0")
        if self.scaling_mode == "wolf_scaling":
            if self.N < 2:
                raise DomainError("wolf scaling needs N >= 2")
            target = math.sqrt(self.C / math.log(self.N)) * math.sqrt(self.nu)
            if not math.isclose(self.lam, target, rel_tol=1e-12):
                raise DomainError("lam inconsistent with wolf scaling; use KernelParams.wolf")
        elif self.scaling_mode != "fixed":
            raise DomainError(f"unknown scaling mode {self.scaling_mode!r}")

    @classmethod
    def wolf(cls, N: int, C: float = 1.0, nu: float = 1.0) -> "KernelParams":
        """Couplings with ``lam / sqrt(nu) = sqrt(C / log N)``."""
        if N < 2:
            raise DomainError("wolf scaling needs N >= 2")
        lam = math.sqrt(C / math.log(N)) * math.sqrt(nu)
        return cls(N=N, lam=lam, nu=nu, C=C, scaling_mode="wolf_scaling")

    def with_cutoff(self, N: int) -> "KernelParams":
        if self.scaling_mode == "wolf_scaling":
            return KernelParams.wolf(N, self.C, self.nu)
        return replace(self, N=N)

    def with_coupling(self, lam: float) -> "KernelParams":
        return KernelParams(N=self.N, lam=lam, nu=self.nu, C=self.C)


def _check_nonzero(*ks: Wavenumber) -> None:
    for k in ks:
        if k[0] == 0 and k[1] == 0:
            raise DomainError("zero wavenumber")


def c_form(l: Wavenumber, m: Wavenumber) -> int:
    return l[1] * m[1] - l[0] * m[0]


def kernel_K(l: Wavenumber, m: Wavenumber, params: KernelParams) -> float:
    _check_nonzero(l, m)
    N = params.N
    s = (l[0] + m[0], l[1] + m[1])
    if max(abs(l[0]), abs(l[1]), abs(m[0]), abs(m[1]), abs(s[0]), abs(s[1])) > N:
        return 0.0
    if s == (0, 0):
        return 0.0
    return math.hypot(*s) * c_form(l, m) / (math.hypot(*l) * math.hypot(*m))


def kernel_K_array(l1, l2, m1, m2, N: int) -> np.ndarray:
    """Vectorised ``K_{l,m}``; entries with ``l = 0`` or ``m = 0`` are set to 0."""
    l1, l2, m1, m2 = (np.asarray(a, dtype=np.int64) for a in (l1, l2, m1, m2))
    s1, s2 = l1 + m1, l2 + m2
    inside = (
        (np.abs(l1) <= N) & (np.abs(l2) <= N) & (np.abs(m1) <= N) & (np.abs(m2) <= N)
        & (np.abs(s1) <= N) & (np.abs(s2) <= N)
    )
    nl = np.hypot(l1, l2)
    nm = np.hypot(m1, m2)
    ok = inside & (nl > 0) & (nm > 0)
    c = (l2 * m2 - l1 * m1).astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        val = np.hypot(s1, s2) * c / (nl * nm)
    return np.where(ok, val, 0.0)


def orbit_sum(m: Wavenumber, l: Wavenumber, params: KernelParams) -> float:
    """``K_{m,l} + K_{-m-l,l} + K_{m,-m-l}``; vanishes identically."""
    s = (-m[0] - l[0], -m[1] - l[1])
    _check_nonzero(m, l, s)
    return kernel_K(m, l, params) + kernel_K(s, l, params) + kernel_K(m, s, params)


def orbit_sums_exhaustive(params: KernelParams) -> tuple[np.ndarray, np.ndarray]:
    """All orbit sums over ``|m|_inf, |l|_inf, |m+l|_inf <= N``.

    Returns ``(sums, scales)`` where ``scales`` is the largest absolute term.
    """
    N = params.N
    r = np.arange(-N, N + 1)
    a1, a2, b1, b2 = (x.ravel() for x in np.meshgrid(r, r, r, r, indexing="ij"))
    s1, s2 = -a1 - b1, -a2 - b2
    keep = (
        ((a1 != 0) | (a2 != 0)) & ((b1 != 0) | (b2 != 0)) & ((s1 != 0) | (s2 != 0))
        & (np.abs(s1) <= N) & (np.abs(s2) <= N)
    )
    a1, a2, b1, b2, s1, s2 = (x[keep] for x in (a1, a2, b1, b2, s1, s2))
    t1 = kernel_K_array(a1, a2, b1, b2, N)
    t2 = kernel_K_array(s1, s2, b1, b2, N)
    t3 = kernel_K_array(a1, a2, s1, s2, N)
    scales = np.maximum(np.maximum(np.abs(t1), np.abs(t2)), np.abs(t3))
    return t1 + t2 + t3, scales


# Lattice sums.  Each kernel returns one compensated partial sum per row of the
# l-lattice; rows are then reduced with math.fsum, so results do not depend on
# how rows are split between workers.

_ENERGY, _VARIATIONAL, _AMINUS, _POISSON_NORM = 0, 1, 2, 3


@numba.njit(cache=True)
def _row_sums(k1, k2, N, kind):
    out = np.zeros(2 * N + 1)
    for i in range(2 * N + 1):
        l1 = float(i - N)
        s = 0.0
        comp = 0.0
        for j in range(2 * N + 1):
            l2 = float(j - N)
            m1 = k1 - l1
            m2 = k2 - l2
            if abs(m1) > N or abs(m2) > N:
                continue
            ln2 = l1 * l1 + l2 * l2
            mn2 = m1 * m1 + m2 * m2
            if ln2 == 0.0 or mn2 == 0.0:
                continue
            c = l2 * m2 - l1 * m1
            if kind == 0:
                d = ln2 + mn2
                term = c * c / (mn2 * d * d)
            elif kind == 1:
                term = c * c / (ln2 * mn2 * (ln2 + mn2))
            elif kind == 3:
                d = ln2 + mn2
                term = c * c / (ln2 * mn2 * d * d)
            else:
                # c(k, -l) c(l, m) / (|l|^2 (|l|^2 + |m|^2))
                ckl = -(k2 * l2 - k1 * l1)
                term = ckl * c / (ln2 * (ln2 + mn2))
            y = term - comp
            t = s + y
            comp = (t - s) - y
            s = t
        out[i] = s
    return out


@numba.njit(cache=True)
def _zero_mode_rows(N):
    out = np.zeros(2 * N + 1)
    for i in range(2 * N + 1):
        l1 = float(i - N)
        s = 0.0
        comp = 0.0
        for j in range(2 * N + 1):
            l2 = float(j - N)
            n2 = l1 * l1 + l2 * l2
            if n2 == 0.0:
                continue
            d = l1 * l1 - l2 * l2
            term = d * d / (n2 * n2 * n2)
            y = term - comp
            t = s + y
            comp = (t - s) - y
            s = t
        out[i] = s
    return out


def _check_mode(k: Wavenumber, N: int) -> None:
    _check_nonzero(k)
    if max(abs(k[0]), abs(k[1])) > N:
        raise DomainError(f"mode {k} outside cutoff {N}")


def _cutoff(params: KernelParams | int) -> int:
    return params if isinstance(params, (int, np.integer)) else params.N


def sigma_energy(k: Wavenumber, params: KernelParams | int) -> float:
    """``sum_l c(l,m)^2 / (|m|^2 (|l|^2+|m|^2)^2)`` over ``l + m = k`` in the cutoff box."""
    N = _cutoff(params)
    _check_mode(k, N)
    return math.fsum(_row_sums(float(k[0]), float(k[1]), N, _ENERGY))


def sigma_variational(k: Wavenumber, params: KernelParams | int) -> float:
    """``sum_l c(l,m)^2 / (|l|^2 |m|^2 (|l|^2+|m|^2))`` over ``l + m = k``."""
    N = _cutoff(params)
    _check_mode(k, N)
    return math.fsum(_row_sums(float(k[0]), float(k[1]), N, _VARIATIONAL))


def sigma_Aminus_bound(k: Wavenumber, params: KernelParams | int) -> float:
    """Signed sum ``sum_l c(k,-l) c(l,m) / (|l|^2 (|l|^2+|m|^2))`` over ``l + m = k``."""
    N = _cutoff(params)
    _check_mode(k, N)
    return math.fsum(_row_sums(float(k[0]), float(k[1]), N, _AMINUS))


def sigma_poisson_norm(k: Wavenumber, params: KernelParams | int) -> float:
    """``sum_l c(l,m)^2 / (|l|^2 |m|^2 (|l|^2+|m|^2)^2)`` over ``l + m = k``; converges as N grows."""
    N = _cutoff(params)
    _check_mode(k, N)
    return math.fsum(_row_sums(float(k[0]), float(k[1]), N, _POISSON_NORM))


def sigma_zero_mode(params: KernelParams | int) -> float:
    """``sum_{0 < |l|_inf <= N} (l1^2 - l2^2)^2 / |l|^6``."""
    N = _cutoff(params)
    if N < 1:
        raise DomainError("N must be >= 1")
    return math.fsum(_zero_mode_rows(N))


def increment_slope(Ns, values) -> float:
    """Least-squares slope of ``values`` against ``log N`` (the coefficient of log N)."""
    x = np.log(np.asarray(Ns, dtype=float))
    y = np.asarray(values, dtype=float)
    return float(np.polyfit(x, y, 1)[0])
