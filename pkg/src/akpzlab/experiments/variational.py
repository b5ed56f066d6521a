"""Deterministic bounds on the Laplace transform of the time-integrated nonlinearity.

With ``F = lam N(phi)`` and Laplace variable ``rate > 0``,

    int_0^inf e^{-rate t} E[(int_0^t F ds)^2] dt = (2 / rate^2) <F, (rate - L)^{-1} F>,

and ``<F, (rate - L)^{-1} F>`` lies between the variational value of any trial
``G`` and ``<F, (rate - L0)^{-1} F>``.  The trial family is ``G = delta Ghat``
with ``Ghat = (-L0)^{-1} F``; the bracket

    2 <F, G> - <(rate - L0) G, G> - |(rate - L0)^{-1/2} A+ G|^2 - |(rate - L0)^{-1/2} A- G|^2

splits into terms (I)-(IV) and is a concave quadratic in ``delta``.  The full
degree-2 optimum solves ``Q G = F`` with a conjugate-gradient iteration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np
import scipy.sparse.linalg

from ..chaos import (
    ChaosKernel,
    CylinderFunctional,
    apply_Aminus,
    apply_Aplus,
    decode,
    encode,
    inner,
    nonlinearity_functional,
)
from ..errors import DomainError, NumericalError
from ..kernels import (
    KernelParams,
    sigma_Aminus_bound,
    sigma_poisson_norm,
    sigma_variational,
)
from ..spectral import FourierField


def _modes(phi: FourierField, N: int) -> list[tuple[tuple[int, int], complex]]:
    out = []
    for k in phi.support():
        if k != (0, 0) and max(abs(k[0]), abs(k[1])) <= N:
            out.append((k, phi.coeff(k)))
    if not out:
        raise DomainError("test function has no modes inside the cutoff")
    return out


def nonlinearity_observable(phi: FourierField, params: KernelParams) -> CylinderFunctional:
    """``F = lam N(phi)`` as a degree-2 functional."""
    return nonlinearity_functional(phi, params).scaled(params.lam)


def resolvent(F: CylinderFunctional, params: KernelParams, rate: float) -> CylinderFunctional:
    """``(rate - L0)^{-1} F``; ``rate = 0`` gives ``(-L0)^{-1}`` on chaos of degree >= 1."""
    comps = {}
    for n, k in F.components.items():
        k1, k2 = decode(k.keys)
        ev = rate + 0.5 * params.nu * np.sum(k1 * k1 + k2 * k2, axis=1)
        comps[n] = ChaosKernel(n, k.keys, k.vals / ev)
    if F.const != 0 and rate == 0:
        raise DomainError("(-L0)^{-1} is undefined on constants")
    return CylinderFunctional(F.const / rate if rate else 0.0, comps)


def laplace_upper(phi: FourierField, params: KernelParams, rate: float) -> float:
    """``2 <F, (rate - L0)^{-1} F>``, the upper end of ``rate^2`` times the Laplace transform."""
    F = nonlinearity_observable(phi, params)
    return 2.0 * inner(F, resolvent(F, params, rate)).real


def laplace_upper_sums(phi: FourierField, params: KernelParams) -> float:
    """``rate -> 0`` limit of :func:`laplace_upper`, equal to the quadratic-variation rate.

    ``2 <F, (-L0)^{-1} F> = 8 lam^2 / nu sum_k |k|^2 sigma_variational(k) |phi_k|^2``.
    """
    tot = math.fsum(
        (k[0] ** 2 + k[1] ** 2) * sigma_variational(k, params) * abs(c) ** 2 for k, c in _modes(phi, params.N)
    )
    return 8.0 * params.lam**2 / params.nu * tot


# terms (I)-(IV) for G = delta * Ghat


@dataclass(frozen=True)
class VariationalTerms:
    """Per-``delta`` coefficients of the bracket for ``G = delta Ghat``.

    ``(I) = delta P``, ``(II) = delta^2 (rate |Ghat|^2 + P)``, ``(III) = delta^2 T3``,
    ``(IV) = delta^2 T4``; the bracket is ``2 delta P - delta^2 Q``.
    """

    N: int
    rate: float
    P: float
    ghat_norm2: float
    T3: float
    T4: float

    @property
    def T2(self) -> float:
        return self.rate * self.ghat_norm2 + self.P

    @property
    def Q(self) -> float:
        return self.T2 + self.T3 + self.T4

    def terms(self, delta: float) -> dict[str, float]:
        return {
            "I": delta * self.P,
            "II": delta**2 * self.T2,
            "III": delta**2 * self.T3,
            "IV": delta**2 * self.T4,
        }

    def bracket(self, delta: float) -> float:
        return 2 * delta * self.P - delta**2 * self.Q

    @property
    def best_delta(self) -> float:
        return self.P / self.Q

    @property
    def line_optimum(self) -> float:
        """``max_delta bracket = P^2 / Q``."""
        return self.P**2 / self.Q


def _weighted_norm2(F: CylinderFunctional, params: KernelParams, rate: float) -> float:
    return inner(F, resolvent(F, params, rate)).real


def variational_terms_chaos(phi: FourierField, params: KernelParams, rate: float) -> VariationalTerms:
    """Terms from the sparse chaos operators (practical for ``N <= 16``)."""
    F = nonlinearity_observable(phi, params)
    Ghat = resolvent(F, params, 0.0)
    P = inner(F, Ghat).real
    ghat2 = inner(Ghat, Ghat).real
    T3 = _weighted_norm2(apply_Aplus(Ghat, params), params, rate)
    T4 = _weighted_norm2(apply_Aminus(Ghat, params), params, rate)
    return VariationalTerms(params.N, rate, P, ghat2, T3, T4)


@numba.njit(cache=True)
def _K(l1, l2, m1, m2, N):
    s1 = l1 + m1
    s2 = l2 + m2
    if abs(l1) > N or abs(l2) > N or abs(m1) > N or abs(m2) > N or abs(s1) > N or abs(s2) > N:
        return 0.0
    nl = l1 * l1 + l2 * l2
    nm = m1 * m1 + m2 * m2
    ns = s1 * s1 + s2 * s2
    if nl == 0.0 or nm == 0.0 or ns == 0.0:
        return 0.0
    return math.sqrt(ns) * (l2 * m2 - l1 * m1) / math.sqrt(nl * nm)


@numba.njit(cache=True)
def _ghat(p1, p2, c1, c2, N, lam, nu):
    K = _K(p1, p2, c1, c2, N)
    if K == 0.0:
        return 0.0
    return 2.0 * lam * K / (nu * (p1 * p1 + p2 * p2 + c1 * c1 + c2 * c2))


@numba.njit(cache=True)
def _raw3(x1, x2, y1, y2, z1, z2, N, lam, nu):
    K = _K(x1, x2, y1, y2, N)
    if K == 0.0:
        return 0.0
    return 2.0 * lam * K * _ghat(x1 + y1, x2 + y2, z1, z2, N, lam, nu)


@numba.njit(cache=True)
def _aplus_sector(k1, k2, N, lam, nu, rate):
    """``|(rate - L0)^{-1/2} A+ Ghat|^2`` for the sector with unit coefficient at ``-k``."""
    out = np.zeros(2 * N + 1)
    for i in range(2 * N + 1):
        a1 = float(i - N)
        acc = 0.0
        for j in range(2 * N + 1):
            a2 = float(j - N)
            if a1 == 0.0 and a2 == 0.0:
                continue
            for p in range(2 * N + 1):
                b1 = float(p - N)
                c1 = k1 - a1 - b1
                if abs(c1) > N:
                    continue
                for q in range(2 * N + 1):
                    b2 = float(q - N)
                    c2 = k2 - a2 - b2
                    if abs(c2) > N:
                        continue
                    if (b1 == 0.0 and b2 == 0.0) or (c1 == 0.0 and c2 == 0.0):
                        continue
                    f3 = (
                        _raw3(a1, a2, b1, b2, c1, c2, N, lam, nu)
                        + _raw3(b1, b2, c1, c2, a1, a2, N, lam, nu)
                        + _raw3(c1, c2, a1, a2, b1, b2, N, lam, nu)
                    ) / 3.0
                    if f3 != 0.0:
                        d = rate + 0.5 * nu * (a1 * a1 + a2 * a2 + b1 * b1 + b2 * b2 + c1 * c1 + c2 * c2)
                        acc += 6.0 * f3 * f3 / d
        out[i] = acc
    return out


def variational_terms_sums(
    phi: FourierField, params: KernelParams, rate: float, with_T3: bool = True
) -> VariationalTerms:
    """Terms from lattice sums; ``T3`` costs ``O(N^4)`` per mode and is NaN if skipped."""
    lam, nu, N = params.lam, params.nu, params.N
    modes = _modes(phi, N)
    P = 4 * lam**2 / nu * math.fsum(
        (k[0] ** 2 + k[1] ** 2) * sigma_variational(k, params) * abs(c) ** 2 for k, c in modes
    )
    ghat2 = 8 * lam**2 / nu**2 * math.fsum(
        (k[0] ** 2 + k[1] ** 2) * sigma_poisson_norm(k, params) * abs(c) ** 2 for k, c in modes
    )
    # A- Ghat at k equals 8 lam^2 / nu sigma_Aminus(k) phi_{-k}
    T4 = math.fsum(
        (8 * lam**2 / nu * sigma_Aminus_bound(k, params)) ** 2 * abs(c) ** 2 / (rate + 0.5 * nu * (k[0] ** 2 + k[1] ** 2))
        for k, c in modes
    )
    if with_T3:
        T3 = math.fsum(
            math.fsum(_aplus_sector(float(k[0]), float(k[1]), N, lam, nu, rate)) * abs(c) ** 2 for k, c in modes
        )
    else:
        T3 = math.nan
    return VariationalTerms(N, rate, P, ghat2, T3, T4)


# full degree-2 optimum


def _sector_pairs(phi: FourierField, N: int) -> np.ndarray:
    """Canonical pairs ``(l, m)`` with ``l + m`` in the support of ``phi`` (both nonzero, in the box)."""
    r = np.arange(-N, N + 1)
    l1, l2 = (x.ravel() for x in np.meshgrid(r, r, indexing="ij"))
    rows = []
    for k, _ in _modes(phi, N):
        m1, m2 = k[0] - l1, k[1] - l2
        ok = (np.abs(m1) <= N) & (np.abs(m2) <= N) & ((l1 != 0) | (l2 != 0)) & ((m1 != 0) | (m2 != 0))
        rows.append(np.stack([encode(l1[ok], l2[ok]), encode(m1[ok], m2[ok])], axis=1))
    rows = np.sort(np.concatenate(rows), axis=1)
    return np.unique(rows, axis=0)


@dataclass(frozen=True)
class FullOptimum:
    value: float
    iterations: int
    residual: float
    kernel: ChaosKernel


def full_degree2_optimum(
    phi: FourierField, params: KernelParams, rate: float, rtol: float = 1e-8, maxiter: int = 1000
) -> FullOptimum:
    """``sup_G`` of the bracket over all degree-2 ``G``, i.e. ``<F, Q^{-1} F>`` with

    ``Q = (rate - L0) - A- (rate - L0)^{-1} A+ - A+ (rate - L0)^{-1} A-`` on the second chaos.
    Solved by conjugate gradients in coordinates orthonormal for the chaos inner product.
    """
    keys = _sector_pairs(phi, params.N)
    index = {(int(a), int(b)): i for i, (a, b) in enumerate(keys)}
    w = 2.0 * ChaosKernel(2, keys, np.zeros(len(keys), complex)).multiplicity()
    sw = np.sqrt(w)
    k1, k2 = decode(keys)
    diag = rate + 0.5 * params.nu * np.sum(k1 * k1 + k2 * k2, axis=1)

    def to_vec(F: CylinderFunctional) -> np.ndarray:
        out = np.zeros(len(keys), complex)
        k = F.components.get(2)
        if k is None:
            return out
        for (a, b), v in zip(k.keys, k.vals):
            i = index.get((int(a), int(b)))
            if i is None:
                if v != 0:
                    raise NumericalError("operator left the momentum sector")
                continue
            out[i] += v
        return out

    def apply_Q(y: np.ndarray) -> np.ndarray:
        G = CylinderFunctional(0.0, {2: ChaosKernel(2, keys, y / sw)})
        up = apply_Aminus(resolvent(apply_Aplus(G, params), params, rate), params)
        down = apply_Aplus(resolvent(apply_Aminus(G, params), params, rate), params)
        return sw * (diag * (y / sw) - to_vec(up) - to_vec(down))

    b = sw * to_vec(nonlinearity_observable(phi, params))
    n = len(keys)
    op = scipy.sparse.linalg.LinearOperator((n, n), matvec=apply_Q, dtype=complex)
    count = [0]

    def cb(_):
        count[0] += 1

    y, info = scipy.sparse.linalg.cg(op, b, rtol=rtol, atol=0.0, maxiter=maxiter, callback=cb)
    res = float(np.linalg.norm(apply_Q(y) - b) / np.linalg.norm(b))
    if info != 0 or not res <= 10 * rtol:
        raise NumericalError(f"conjugate gradients did not converge: relative residual {res:.3e} after {count[0]} iterations")
    value = float(np.vdot(b, y).real)
    return FullOptimum(value, count[0], res, ChaosKernel(2, keys, y / sw))
