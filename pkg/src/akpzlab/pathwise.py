"""Pathwise evaluation of degree <= 2 functionals along trajectories.

For ``F = c + I_1(f_1) + I_2(f_2)`` the Malliavin derivative at a sample is
``D_k F(u) = f_1(-k) + 2 sum_m f_2(-k, m) u_m``; it is stored as a sparse
matrix acting on the flattened coefficient array.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse

from .chaos import CylinderFunctional, apply_L0, decode, evaluate
from .errors import CapacityError, DomainError
from .kernels import KernelParams
from .spectral import knorm2


class PathFunctional:
    def __init__(self, F: CylinderFunctional, params: KernelParams):
        if F.degree > 2:
            raise CapacityError("pathwise generator implemented for degree <= 2")
        N = params.N
        if F.support_cutoff() > N:
            raise DomainError("functional support exceeds the simulation cutoff")
        self.F = F
        self.params = params
        self.N = N
        self._L0F = apply_L0(F, params)
        W = 2 * N + 1
        self._W = W
        self._k2 = knorm2(N).ravel()
        d1 = np.zeros(W * W, complex)
        if 1 in F.components:
            f1 = F.components[1]
            a1, a2 = decode(f1.keys[:, 0])
            np.add.at(d1, (-a1 + N) * W + (-a2 + N), f1.vals)
        self._d1 = d1
        if 2 in F.components and F.components[2].nnz:
            rows, vals = F.components[2].expand()
            a1, a2 = decode(rows[:, 0])
            b1, b2 = decode(rows[:, 1])
            r = (-a1 + N) * W + (-a2 + N)
            c = (b1 + N) * W + (b2 + N)
            self._S = scipy.sparse.csr_matrix((2 * vals, (r, c)), shape=(W * W, W * W))
        else:
            self._S = None

    def value(self, u: np.ndarray) -> np.ndarray:
        return evaluate(self.F, u)

    def l0(self, u: np.ndarray) -> np.ndarray:
        return evaluate(self._L0F, u)

    def derivatives(self, u: np.ndarray) -> np.ndarray:
        """``D_k F(u)`` for every lattice ``k``, shape ``(B, (2N+1)^2)``."""
        B = u.shape[0]
        flat = u.reshape(B, -1)
        D = np.broadcast_to(self._d1, flat.shape).astype(complex)
        if self._S is not None:
            D = D + (self._S @ flat.T).T
        return D

    def energy(self, u: np.ndarray) -> np.ndarray:
        """``sum_k |k|^2 D_k F D_{-k} F``."""
        D = self.derivatives(u)
        Dm = D.reshape(-1, self._W, self._W)[:, ::-1, ::-1].reshape(D.shape)
        return np.real(np.sum(self._k2 * D * Dm, axis=1))

    def antisymmetric(self, u: np.ndarray, drift_u: np.ndarray) -> np.ndarray:
        """``A F(u) = sum_j lam N_j(u) D_{-j} F(u)`` given ``drift_u = lam N(u)``."""
        D = self.derivatives(u)
        Dm = D.reshape(-1, self._W, self._W)[:, ::-1, ::-1]
        return np.real(np.sum(drift_u * Dm, axis=(1, 2)))

    def generator(self, u: np.ndarray, drift_u: np.ndarray) -> np.ndarray:
        """``(L0 + A) F(u)``."""
        return self.l0(u) + self.antisymmetric(u, drift_u)
