"""Wiener-chaos representation of polynomial functionals of the white noise.

Conventions
-----------
``eta_k = eta(e_{-k})`` with ``E[eta_k eta_j] = 1{k+j=0}``.  A degree-n component
with symmetric kernel ``f`` represents

    I_n(f) = sum over ordered (t_1..t_n) of f(t) :eta_{t_1} ... eta_{t_n}:

(Wick ordered).  ``D_k`` acts as ``d/d eta_{-k}``, so ``D_k I_n(f) = n I_{n-1}(f(-k, .))``
and the Hermitian inner product is ``<F, G> = sum_n n! sum_t f_n(t) conj(g_n(t))``.

Kernels are stored sparsely on canonical (sorted) tuples.  Wavenumbers are packed
into single int64 keys so rows sort lexicographically.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import CapacityError, DomainError
from .kernels import KernelParams, kernel_K_array
from .spectral import FourierField, TestFunction

_OFF = 1 << 20
_SPAN = 1 << 21
MAX_GENERATOR_DEGREE = 3
WICK_DEGREE_BUDGET = 12


def encode(k1, k2) -> np.ndarray:
    return (np.asarray(k1, dtype=np.int64) + _OFF) * _SPAN + (np.asarray(k2, dtype=np.int64) + _OFF)


def decode(keys) -> tuple[np.ndarray, np.ndarray]:
    keys = np.asarray(keys, dtype=np.int64)
    return keys // _SPAN - _OFF, keys % _SPAN - _OFF


def negate(keys) -> np.ndarray:
    k1, k2 = decode(keys)
    return encode(-k1, -k2)


_ZERO_KEY = int(encode(0, 0))


def _stab(rows: np.ndarray) -> np.ndarray:
    """Product of multiplicity factorials of each sorted row."""
    out = np.ones(rows.shape[0])
    run = np.ones(rows.shape[0])
    for j in range(1, rows.shape[1]):
        same = rows[:, j] == rows[:, j - 1]
        run = np.where(same, run + 1, 1)
        out *= np.where(same, run, 1)
    return out


def _accumulate(rows: np.ndarray, vals: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sum values over identical rows; returns sorted unique rows."""
    if rows.shape[0] == 0:
        return rows, vals
    if rows.shape[1] == 1:
        uniq, inv = np.unique(rows[:, 0], return_inverse=True)
        uniq = uniq[:, None]
    else:
        uniq, inv = np.unique(rows, axis=0, return_inverse=True)
    inv = inv.ravel()
    acc = np.bincount(inv, weights=vals.real, minlength=len(uniq)) + 1j * np.bincount(
        inv, weights=vals.imag, minlength=len(uniq)
    )
    return uniq, acc


def _row_ids(*blocks: np.ndarray) -> list[np.ndarray]:
    """Common integer ids for identical rows across several 2-D key arrays."""
    sizes = [b.shape[0] for b in blocks]
    width = blocks[0].shape[1]
    if width == 0:
        return [np.zeros(s, dtype=np.int64) for s in sizes]
    allrows = np.concatenate(blocks, axis=0)
    if width == 1:
        _, inv = np.unique(allrows[:, 0], return_inverse=True)
    else:
        _, inv = np.unique(allrows, axis=0, return_inverse=True)
    inv = inv.ravel()
    return np.split(inv, np.cumsum(sizes)[:-1])


@dataclass(frozen=True)
class ChaosKernel:
    """Symmetric kernel of degree ``n >= 1`` stored on canonical sorted tuples."""

    degree: int
    keys: np.ndarray  # (nnz, degree) int64, rows sorted and unique
    vals: np.ndarray  # (nnz,) complex

    def __post_init__(self) -> None:
        if self.degree < 1:
            raise DomainError("kernel degree must be >= 1")
        if self.keys.ndim != 2 or self.keys.shape[1] != self.degree:
            raise DomainError("key array shape does not match degree")

    @classmethod
    def empty(cls, n: int) -> "ChaosKernel":
        return cls(n, np.zeros((0, n), np.int64), np.zeros(0, complex))

    @classmethod
    def from_ordered(cls, n: int, rows: np.ndarray, vals: np.ndarray) -> "ChaosKernel":
        """Symmetrisation of the function given by raw values on ordered tuples.

        Repeated ordered tuples are summed first.  For a function that is already
        symmetric and listed on all orderings of its support, this is the identity.
        """
        rows = np.asarray(rows, dtype=np.int64).reshape(-1, n)
        vals = np.asarray(vals, dtype=complex).ravel()
        if rows.shape[0] == 0:
            return cls.empty(n)
        canon = np.sort(rows, axis=1)
        uniq, acc = _accumulate(canon, vals)
        acc = acc * (_stab(uniq) / math.factorial(n))
        keep = acc != 0
        return cls(n, uniq[keep], acc[keep])

    @classmethod
    def from_dict(cls, n: int, entries: dict) -> "ChaosKernel":
        """From ``{(k_1, ..., k_n): value}`` read as values of a symmetric function."""
        if not entries:
            return cls.empty(n)
        rows = []
        vals = []
        for ks, v in entries.items():
            if len(ks) != n:
                raise DomainError("tuple length does not match degree")
            rows.append(sorted(int(encode(*k)) for k in ks))
            vals.append(v)
        rows = np.array(rows, dtype=np.int64)
        uniq, idx = np.unique(rows, axis=0, return_index=True)
        return cls(n, uniq, np.asarray(vals, complex)[idx])

    @property
    def nnz(self) -> int:
        return self.vals.shape[0]

    def multiplicity(self) -> np.ndarray:
        """Number of distinct orderings of each stored tuple."""
        return math.factorial(self.degree) / _stab(self.keys)

    def wavenumbers(self) -> tuple[np.ndarray, np.ndarray]:
        return decode(self.keys)

    def expand(self) -> tuple[np.ndarray, np.ndarray]:
        """All distinct ordered tuples with their (symmetric) values."""
        n = self.degree
        if n > 6:
            raise CapacityError("ordered expansion limited to degree <= 6")
        if self.nnz == 0:
            return self.keys, self.vals
        perms = list(itertools.permutations(range(n)))
        rows = np.concatenate([self.keys[:, p] for p in perms], axis=0)
        vals = np.tile(self.vals, len(perms))
        src = np.tile(np.arange(self.nnz), len(perms))
        # distinct canonical rows have disjoint orbits, so dedupe per (row, source)
        tagged = np.concatenate([src[:, None], rows], axis=1)
        _, idx = np.unique(tagged, axis=0, return_index=True)
        return rows[idx], vals[idx]

    def to_dict(self) -> dict:
        k1, k2 = decode(self.keys)
        return {
            tuple((int(a), int(b)) for a, b in zip(r1, r2)): complex(v)
            for r1, r2, v in zip(k1, k2, self.vals)
        }

    def scaled(self, c: complex) -> "ChaosKernel":
        if c == 0:
            return ChaosKernel.empty(self.degree)
        return ChaosKernel(self.degree, self.keys, self.vals * c)

    def conj_reflect(self) -> "ChaosKernel":
        """Kernel of ``conj(F)``: ``t -> conj(f(-t))``."""
        rows = np.sort(negate(self.keys), axis=1)
        order = np.lexsort(rows.T[::-1]) if rows.shape[0] else np.zeros(0, int)
        return ChaosKernel(self.degree, rows[order], np.conj(self.vals[order]))

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.vals), initial=0.0))

    def sup_norm_wavenumber(self) -> int:
        if self.nnz == 0:
            return 0
        k1, k2 = decode(self.keys)
        return int(max(np.abs(k1).max(), np.abs(k2).max()))


def _combine(n: int, parts: Sequence[tuple[np.ndarray, np.ndarray]]) -> ChaosKernel:
    """Sum of kernels given as (canonical rows, values) pairs."""
    parts = [p for p in parts if p[0].shape[0]]
    if not parts:
        return ChaosKernel.empty(n)
    rows = np.concatenate([p[0] for p in parts], axis=0)
    vals = np.concatenate([p[1] for p in parts])
    uniq, acc = _accumulate(rows, vals)
    keep = acc != 0
    return ChaosKernel(n, uniq[keep], acc[keep])


@dataclass(frozen=True)
class CylinderFunctional:
    """``F = const + sum_n I_n(f_n)``."""

    const: complex = 0.0
    components: dict[int, ChaosKernel] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for n, k in self.components.items():
            if k.degree != n:
                raise DomainError("component stored under wrong degree")

    @classmethod
    def from_kernels(cls, *kernels: ChaosKernel, const: complex = 0.0) -> "CylinderFunctional":
        return sum_functionals([cls(const, {})] + [cls(0.0, {k.degree: k}) for k in kernels])

    @property
    def degree(self) -> int:
        nz = [n for n, k in self.components.items() if k.nnz]
        return max(nz, default=0)

    def component(self, n: int) -> ChaosKernel:
        return self.components.get(n, ChaosKernel.empty(n))

    def __add__(self, other: "CylinderFunctional") -> "CylinderFunctional":
        return sum_functionals([self, other])

    def __sub__(self, other: "CylinderFunctional") -> "CylinderFunctional":
        return sum_functionals([self, other.scaled(-1.0)])

    def scaled(self, c: complex) -> "CylinderFunctional":
        return CylinderFunctional(self.const * c, {n: k.scaled(c) for n, k in self.components.items()})

    __rmul__ = scaled

    def __mul__(self, c):
        if isinstance(c, CylinderFunctional):
            return product(self, c)
        return self.scaled(c)

    def conj(self) -> "CylinderFunctional":
        return CylinderFunctional(np.conj(self.const), {n: k.conj_reflect() for n, k in self.components.items()})

    def reality_defect(self) -> float:
        """Largest deviation from ``conj(f(t)) = f(-t)`` (zero for real functionals)."""
        d = abs(complex(self.const).imag)
        for n, k in self.components.items():
            diff = sum_functionals([CylinderFunctional(0, {n: k}), CylinderFunctional(0, {n: k.conj_reflect().scaled(-1)})])
            d = max(d, max((c.max_abs() for c in diff.components.values()), default=0.0))
        return d

    def is_real(self, tol: float = 1e-12) -> bool:
        scale = max([abs(self.const)] + [k.max_abs() for k in self.components.values()] + [1e-300])
        return self.reality_defect() <= tol * scale

    def inner(self, other: "CylinderFunctional") -> complex:
        """``E[F conj(G)]``."""
        return inner(self, other)

    def norm2(self) -> float:
        return float(inner(self, self).real)

    def max_abs(self) -> float:
        return max([abs(self.const)] + [k.max_abs() for k in self.components.values()])

    def support_cutoff(self) -> int:
        return max([k.sup_norm_wavenumber() for k in self.components.values()], default=0)

    def to_json(self) -> str:
        comps = {}
        for n, k in sorted(self.components.items()):
            comps[str(n)] = [
                [[list(w) for w in ks], [v.real, v.imag]] for ks, v in k.to_dict().items()
            ]
        c = complex(self.const)
        return json.dumps({"const": [c.real, c.imag], "components": comps})

    @classmethod
    def from_json(cls, text: str) -> "CylinderFunctional":
        d = json.loads(text)
        comps = {}
        for n, entries in d["components"].items():
            n = int(n)
            comps[n] = ChaosKernel.from_dict(
                n, {tuple(tuple(w) for w in ks): complex(*v) for ks, v in entries}
            )
        return cls(complex(*d["const"]), comps)


def sum_functionals(Fs: Iterable[CylinderFunctional]) -> CylinderFunctional:
    const = 0j
    by_degree: dict[int, list] = {}
    for F in Fs:
        const += F.const
        for n, k in F.components.items():
            by_degree.setdefault(n, []).append((k.keys, k.vals))
    comps = {n: _combine(n, parts) for n, parts in by_degree.items()}
    comps = {n: k for n, k in comps.items() if k.nnz}
    return CylinderFunctional(const, comps)


def inner(F: CylinderFunctional, G: CylinderFunctional) -> complex:
    total = complex(F.const) * np.conj(complex(G.const))
    for n, f in F.components.items():
        g = G.components.get(n)
        if g is None or f.nnz == 0 or g.nnz == 0:
            continue
        fi, gi = _row_ids(f.keys, g.keys)
        common, fa, ga = np.intersect1d(fi, gi, return_indices=True)
        w = f.multiplicity()[fa]
        total += math.factorial(n) * np.sum(w * f.vals[fa] * np.conj(g.vals[ga]))
    return complex(total)


# product formula


def _splits(k: ChaosKernel, p: int, side: str):
    """Split every stored tuple into (head, tail) over all position subsets of size p.

    Weights make the sum over position subsets reproduce the sum over ordered
    heads and tails (see ``product``).
    """
    n = k.degree
    stab_s = _stab(k.keys)
    heads, tails, weights = [], [], []
    for combo in itertools.combinations(range(n), p):
        rest = [i for i in range(n) if i not in combo]
        t = k.keys[:, list(combo)]
        h = k.keys[:, rest]
        if side == "left":
            w = math.factorial(n - p) * math.factorial(p) / stab_s
        else:
            t = np.sort(negate(t), axis=1)
            w = math.factorial(n - p) * _stab(t) / stab_s
        heads.append(h)
        tails.append(t)
        weights.append(w * k.vals)
    return np.concatenate(heads), np.concatenate(tails), np.concatenate(weights)


def _kernel_product(f: ChaosKernel, g: ChaosKernel, p: int):
    """Symmetrised ``f (x)_p g`` scaled by ``p! C(n,p) C(m,p)`` as (degree, rows, vals)."""
    n, m = f.degree, g.degree
    fh, ft, fw = _splits(f, p, "left")
    gh, gt, gw = _splits(g, p, "right")
    fid, gid = _row_ids(ft, gt)
    order = np.argsort(gid, kind="stable")
    gid_sorted = gid[order]
    lo = np.searchsorted(gid_sorted, fid, side="left")
    hi = np.searchsorted(gid_sorted, fid, side="right")
    counts = hi - lo
    total = int(counts.sum())
    if total == 0:
        return n + m - 2 * p, np.zeros((0, n + m - 2 * p), np.int64), np.zeros(0, complex)
    if total > 50_000_000:
        raise CapacityError(f"product expansion too large ({total} terms)")
    fi = np.repeat(np.arange(len(fid)), counts)
    starts = np.repeat(lo, counts)
    offs = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    gi = order[starts + offs]
    coef = math.factorial(p) * math.comb(n, p) * math.comb(m, p)
    vals = fw[fi] * gw[gi] * coef
    d = n + m - 2 * p
    if d == 0:
        return 0, np.zeros((1, 0), np.int64), np.array([vals.sum()])
    rows = np.sort(np.concatenate([fh[fi], gh[gi]], axis=1), axis=1)
    uniq, acc = _accumulate(rows, vals)
    acc = acc * (_stab(uniq) / math.factorial(d))
    return d, uniq, acc


def product(F: CylinderFunctional, G: CylinderFunctional, max_degree: int | None = None) -> CylinderFunctional:
    """Chaos expansion of the pointwise product ``F G``, optionally truncated in degree."""
    parts: dict[int, list] = {}
    const = complex(F.const) * complex(G.const)
    cap = math.inf if max_degree is None else max_degree
    if G.const != 0:
        for n, f in F.components.items():
            if n <= cap:
                parts.setdefault(n, []).append((f.keys, f.vals * G.const))
    if F.const != 0:
        for n, g in G.components.items():
            if n <= cap:
                parts.setdefault(n, []).append((g.keys, g.vals * F.const))
    for n, f in F.components.items():
        for m, g in G.components.items():
            if f.nnz == 0 or g.nnz == 0:
                continue
            for p in range(min(n, m) + 1):
                if n + m - 2 * p > cap:
                    continue
                d, rows, vals = _kernel_product(f, g, p)
                if d == 0:
                    const += complex(vals.sum())
                else:
                    parts.setdefault(d, []).append((rows, vals))
    comps = {d: _combine(d, ps) for d, ps in parts.items()}
    return CylinderFunctional(const, {d: k for d, k in comps.items() if k.nnz})


def wick_expectation(Fs: Sequence[CylinderFunctional]) -> complex:
    """Exact ``E[F_1 ... F_r]`` (no conjugation) for Gaussian ``eta``."""
    Fs = list(Fs)
    if not Fs:
        return 1.0
    degs = [F.degree for F in Fs]
    if sum(degs) > WICK_DEGREE_BUDGET:
        raise CapacityError(f"total degree {sum(degs)} exceeds budget {WICK_DEGREE_BUDGET}")
    P = Fs[0]
    for j in range(1, len(Fs)):
        P = product(P, Fs[j], max_degree=sum(degs[j + 1:]))
    return complex(P.const)


# generator


def apply_L0(F: CylinderFunctional, params: KernelParams) -> CylinderFunctional:
    comps = {}
    for n, k in F.components.items():
        k1, k2 = decode(k.keys)
        ev = -0.5 * params.nu * np.sum(k1 * k1 + k2 * k2, axis=1)
        comps[n] = ChaosKernel(n, k.keys, k.vals * ev)
    return CylinderFunctional(0.0, comps)


def _aplus_kernel(f: ChaosKernel, params: KernelParams) -> ChaosKernel:
    n = f.degree
    if n + 1 > MAX_GENERATOR_DEGREE:
        raise CapacityError(f"raising degree {n} would exceed {MAX_GENERATOR_DEGREE}")
    N = params.N
    rows, vals = f.expand()
    a1, a2 = decode(rows[:, 0])
    r = np.arange(-N, N + 1)
    m1, m2 = (x.ravel() for x in np.meshgrid(r, r, indexing="ij"))
    # every split a = m + l with m on the cutoff lattice
    M1 = m1[None, :]
    M2 = m2[None, :]
    L1 = a1[:, None] - M1
    L2 = a2[:, None] - M2
    K = kernel_K_array(M1, M2, L1, L2, N)
    ri, mi = np.nonzero(K)
    out_rows = np.concatenate(
        [encode(m1[mi], m2[mi])[:, None], encode(L1[ri, mi], L2[ri, mi])[:, None], rows[ri, 1:]], axis=1
    )
    out_vals = n * params.lam * K[ri, mi] * vals[ri]
    return ChaosKernel.from_ordered(n + 1, out_rows, out_vals)


def _aminus_kernel(f: ChaosKernel, params: KernelParams) -> ChaosKernel | None:
    n = f.degree
    if n < 2:
        return None
    rows, vals = f.expand()
    a1, a2 = decode(rows[:, 0])
    b1, b2 = decode(rows[:, 1])
    # (a, b, rest) with m = -b, l = a + b contributes K_{m,l} f at (l, rest)
    K = kernel_K_array(-b1, -b2, a1 + b1, a2 + b2, params.N)
    nz = K != 0
    out_rows = np.concatenate([encode(a1 + b1, a2 + b2)[:, None], rows[:, 2:]], axis=1)[nz]
    out_vals = 2 * n * (n - 1) * params.lam * K[nz] * vals[nz]
    return ChaosKernel.from_ordered(n - 1, out_rows, out_vals)


def _double_contraction(f: ChaosKernel, params: KernelParams) -> tuple[int, np.ndarray, np.ndarray] | None:
    """Degree n-3 part of ``A I_n(f)``; zero by the orbit identity, kept as a check."""
    n = f.degree
    if n < 3:
        return None
    rows, vals = f.expand()
    a1, a2 = decode(rows[:, 0])
    b1, b2 = decode(rows[:, 1])
    c1, c2 = decode(rows[:, 2])
    closed = (a1 + b1 + c1 == 0) & (a2 + b2 + c2 == 0)
    K = kernel_K_array(-b1, -b2, -c1, -c2, params.N)
    sel = closed & (K != 0)
    coef = n * (n - 1) * (n - 2) * params.lam
    return n - 3, rows[sel, 3:], coef * K[sel] * vals[sel]


def apply_Aplus(F: CylinderFunctional, params: KernelParams) -> CylinderFunctional:
    if F.degree + 1 > MAX_GENERATOR_DEGREE:
        raise CapacityError(f"A+ of a degree-{F.degree} functional exceeds degree {MAX_GENERATOR_DEGREE}")
    comps = {}
    for n, k in F.components.items():
        if k.nnz:
            out = _aplus_kernel(k, params)
            if out.nnz:
                comps[n + 1] = out
    return CylinderFunctional(0.0, comps)


def apply_Aminus(F: CylinderFunctional, params: KernelParams) -> CylinderFunctional:
    comps = {}
    for n, k in F.components.items():
        out = _aminus_kernel(k, params) if k.nnz else None
        if out is not None and out.nnz:
            comps[n - 1] = out
    return CylinderFunctional(0.0, comps)


def apply_A(F: CylinderFunctional, params: KernelParams) -> CylinderFunctional:
    """Full antisymmetric part ``A = A+ + A-`` including the degree n-3 contraction."""
    if F.degree > MAX_GENERATOR_DEGREE:
        raise CapacityError("generator only implemented up to degree 3")
    parts = []
    const = 0j
    for n, k in F.components.items():
        if not k.nnz:
            continue
        if n + 1 <= MAX_GENERATOR_DEGREE:
            parts.append(CylinderFunctional(0.0, {n + 1: _aplus_kernel(k, params)}))
        am = _aminus_kernel(k, params)
        if am is not None:
            parts.append(CylinderFunctional(0.0, {n - 1: am}))
        dc = _double_contraction(k, params)
        if dc is not None:
            d, rows, vals = dc
            if d == 0:
                const += complex(vals.sum())
            else:
                parts.append(CylinderFunctional(0.0, {d: ChaosKernel.from_ordered(d, rows, vals)}))
    return sum_functionals([CylinderFunctional(const, {})] + parts)


def apply_L(F: CylinderFunctional, params: KernelParams) -> CylinderFunctional:
    return apply_L0(F, params) + apply_A(F, params)


def adjointness_check(F: CylinderFunctional, G: CylinderFunctional, params: KernelParams) -> complex:
    """``<A+ F, G> + <F, A- G>``; vanishes identically."""
    return inner(apply_Aplus(F, params), G) + inner(F, apply_Aminus(G, params))


# named functionals


def _test_function_modes(phi: FourierField, N: int | None = None):
    sup = phi.support()
    ks = [k for k in sup if k != (0, 0) and (N is None or max(abs(k[0]), abs(k[1])) <= N)]
    return ks


def linear_functional(phi: FourierField) -> CylinderFunctional:
    """``eta(phi) = sum_k phi_{-k} eta_k``."""
    ks = _test_function_modes(phi)
    if not ks:
        return CylinderFunctional()
    rows = encode([k[0] for k in ks], [k[1] for k in ks])[:, None]
    vals = np.array([phi.coeff((-k[0], -k[1])) for k in ks])
    return CylinderFunctional(0.0, {1: ChaosKernel.from_ordered(1, rows, vals)})


def _pairs_summing_to(ks, N: int):
    """All ordered (l, m) in the cutoff box with ``l + m`` in ``ks``; returns arrays."""
    r = np.arange(-N, N + 1)
    l1, l2 = (x.ravel() for x in np.meshgrid(r, r, indexing="ij"))
    out = []
    for k in ks:
        m1, m2 = k[0] - l1, k[1] - l2
        ok = (np.abs(m1) <= N) & (np.abs(m2) <= N) & ((l1 != 0) | (l2 != 0)) & ((m1 != 0) | (m2 != 0))
        out.append((l1[ok], l2[ok], m1[ok], m2[ok], k))
    return out


def nonlinearity_functional(phi: FourierField, params: KernelParams) -> CylinderFunctional:
    """``N(phi) = sum_{l,m} K_{l,m} phi_{-l-m} eta_l eta_m`` (already Wick ordered: K_{l,-l} = 0)."""
    N = params.N
    parts = []
    for l1, l2, m1, m2, k in _pairs_summing_to(_test_function_modes(phi, N), N):
        K = kernel_K_array(l1, l2, m1, m2, N)
        rows = np.stack([encode(l1, l2), encode(m1, m2)], axis=1)
        parts.append((rows, K * phi.coeff((-k[0], -k[1]))))
    if not parts:
        return CylinderFunctional()
    rows = np.concatenate([p[0] for p in parts])
    vals = np.concatenate([p[1] for p in parts])
    return CylinderFunctional(0.0, {2: ChaosKernel.from_ordered(2, rows, vals)})


POISSON_SIGN = -1.0


def poisson_solve_nonlinearity(phi: FourierField, params: KernelParams) -> CylinderFunctional:
    """Degree-2 ``H`` with ``L0 H = lam N(phi)``.

    Kernel ``-2 lam/nu K_{l,m} phi_{-l-m} / (|l|^2 + |m|^2)``.
    """
    N = params.N
    parts = []
    for l1, l2, m1, m2, k in _pairs_summing_to(_test_function_modes(phi, N), N):
        K = kernel_K_array(l1, l2, m1, m2, N)
        d = (l1 * l1 + l2 * l2 + m1 * m1 + m2 * m2).astype(float)
        rows = np.stack([encode(l1, l2), encode(m1, m2)], axis=1)
        coef = POISSON_SIGN * 2 * params.lam / params.nu
        parts.append((rows, coef * K * phi.coeff((-k[0], -k[1])) / d))
    if not parts:
        return CylinderFunctional()
    rows = np.concatenate([p[0] for p in parts])
    vals = np.concatenate([p[1] for p in parts])
    return CylinderFunctional(0.0, {2: ChaosKernel.from_ordered(2, rows, vals)})


def _diagonal_pairs(N: int):
    r = np.arange(-N, N + 1)
    l1, l2 = (x.ravel() for x in np.meshgrid(r, r, indexing="ij"))
    ok = (l1 != 0) | (l2 != 0)
    return l1[ok], l2[ok]


def zero_mode_nonlinearity(params: KernelParams) -> CylinderFunctional:
    """Zero Fourier mode of the h-nonlinearity at the GFF ``h_l = eta_l / |l|``.

    ``sum_l c(l,-l) / |l|^2 :eta_l eta_{-l}:``; the Wick constant vanishes by symmetry.
    """
    l1, l2 = _diagonal_pairs(params.N)
    n2 = (l1 * l1 + l2 * l2).astype(float)
    c = (l1 * l1 - l2 * l2).astype(float)  # c(l, -l)
    rows = np.stack([encode(l1, l2), encode(-l1, -l2)], axis=1)
    return CylinderFunctional(0.0, {2: ChaosKernel.from_ordered(2, rows, c / n2)})


def poisson_solve_zero_mode(params: KernelParams) -> CylinderFunctional:
    """``L0 H0 = lam Ntilde_0``: kernel ``-lam/nu c(l,-l) / |l|^4`` on pairs ``(l, -l)``."""
    l1, l2 = _diagonal_pairs(params.N)
    n2 = (l1 * l1 + l2 * l2).astype(float)
    c = (l1 * l1 - l2 * l2).astype(float)
    rows = np.stack([encode(l1, l2), encode(-l1, -l2)], axis=1)
    vals = POISSON_SIGN * params.lam / params.nu * c / (n2 * n2)
    return CylinderFunctional(0.0, {2: ChaosKernel.from_ordered(2, rows, vals)})


# Malliavin calculus


def malliavin_derivative(F: CylinderFunctional, k: tuple[int, int]) -> CylinderFunctional:
    """``D_k F`` with ``D_k eta_j = 1{j + k = 0}``."""
    target = int(encode(-k[0], -k[1]))
    const = 0j
    comps = {}
    for n, f in F.components.items():
        if not f.nnz:
            continue
        hit = np.any(f.keys == target, axis=1)
        if not hit.any():
            continue
        if n == 1:
            const += n * complex(f.vals[hit].sum())
            continue
        rows, vals = ChaosKernel(n, f.keys[hit], f.vals[hit]).expand()
        first = rows[:, 0] == target
        comps[n - 1] = ChaosKernel.from_ordered(n - 1, rows[first, 1:], n * vals[first])
    return CylinderFunctional(const, comps)


def derivative_modes(F: CylinderFunctional) -> list[tuple[int, int]]:
    """Wavenumbers ``k`` with ``D_k F`` possibly nonzero."""
    keys = set()
    for f in F.components.values():
        keys.update(np.unique(f.keys).tolist())
    k1, k2 = decode(np.array(sorted(keys), dtype=np.int64))
    return [(-int(a), -int(b)) for a, b in zip(k1, k2)]


def energy_functional(F: CylinderFunctional, params: KernelParams | None = None) -> CylinderFunctional:
    """``E(F) = sum_k |k|^2 D_k F  D_{-k} F`` expanded with the product formula."""
    if F.degree > 2:
        raise CapacityError("energy functional implemented for degree <= 2")
    terms = []
    for k in derivative_modes(F):
        if k == (0, 0):
            continue
        Dk = malliavin_derivative(F, k)
        Dmk = malliavin_derivative(F, (-k[0], -k[1]))
        terms.append(product(Dk, Dmk).scaled(k[0] ** 2 + k[1] ** 2))
    return sum_functionals(terms)


# evaluation at samples


def evaluate_complex(F: CylinderFunctional, fields: np.ndarray | FourierField) -> np.ndarray | complex:
    """Wick-ordered evaluation; ``fields`` is a field or a batch ``(B, 2M+1, 2M+1)``."""
    arr = fields.coeffs if isinstance(fields, FourierField) else np.asarray(fields)
    single = arr.ndim == 2
    if single:
        arr = arr[None]
    M = (arr.shape[-1] - 1) // 2
    if F.support_cutoff() > M:
        raise DomainError(f"functional needs modes up to {F.support_cutoff()}, field has {M}")
    out = np.full(arr.shape[0], complex(F.const))
    for n, f in F.components.items():
        if not f.nnz:
            continue
        if n > 3:
            raise CapacityError("evaluation implemented for degree <= 3")
        k1, k2 = decode(f.keys)
        u = arr[:, k1 + M, k2 + M]  # (B, nnz, n)
        if n == 1:
            mono = u[..., 0]
        elif n == 2:
            mono = u[..., 0] * u[..., 1] - _paired(k1, k2, 0, 1)
        else:
            mono = (
                u[..., 0] * u[..., 1] * u[..., 2]
                - _paired(k1, k2, 0, 1) * u[..., 2]
                - _paired(k1, k2, 0, 2) * u[..., 1]
                - _paired(k1, k2, 1, 2) * u[..., 0]
            )
        out = out + mono @ (f.multiplicity() * f.vals)
    return out[0] if single else out


def _paired(k1, k2, i, j) -> np.ndarray:
    return ((k1[:, i] + k1[:, j] == 0) & (k2[:, i] + k2[:, j] == 0)).astype(float)


def evaluate(F: CylinderFunctional, fields) -> np.ndarray | float:
    """Real value of a real functional at a sample (or batch of samples)."""
    v = evaluate_complex(F, fields)
    return np.real(v) if isinstance(v, np.ndarray) else float(np.real(v))


# random functionals for property tests


def random_kernel(
    n: int,
    M: int,
    rng: np.random.Generator,
    nnz: int = 8,
    real: bool = True,
    momenta: Sequence[tuple[int, int]] | None = None,
) -> ChaosKernel:
    """Random symmetric kernel on ``0 < |k_i|_inf <= M``; made real if asked.

    With ``momenta`` every tuple sums to one of the given wavenumbers, which makes
    supports of independently drawn kernels overlap under the generator.
    """
    k = rng.integers(-M, M + 1, size=(nnz, n, 2))
    if momenta is not None:
        tot = np.asarray(momenta)[rng.integers(len(momenta), size=nnz)]
        k[:, -1] = tot - k[:, :-1].sum(axis=1)
    ok = ~np.any(np.all(k == 0, axis=2), axis=1) & np.all(np.abs(k) <= M, axis=(1, 2))
    k = k[ok]
    rows = encode(k[..., 0], k[..., 1])
    vals = rng.standard_normal(len(k)) + 1j * rng.standard_normal(len(k))
    f = ChaosKernel.from_ordered(n, rows, vals)
    if real:
        g = f.conj_reflect()
        f = _combine(n, [(f.keys, 0.5 * f.vals), (g.keys, 0.5 * g.vals)])
    return f


def random_functional(
    degrees: Iterable[int],
    M: int,
    rng: np.random.Generator,
    nnz: int = 8,
    momenta: Sequence[tuple[int, int]] | None = None,
) -> CylinderFunctional:
    """Random real functional with the given chaos degrees (0 means a constant)."""
    degrees = list(degrees)
    comps = {n: random_kernel(n, M, rng, nnz, momenta=momenta) for n in degrees if n >= 1}
    const = float(rng.standard_normal()) if 0 in degrees else 0.0
    return CylinderFunctional(const, {n: k for n, k in comps.items() if k.nnz})
