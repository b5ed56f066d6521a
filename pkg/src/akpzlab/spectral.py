"""Real fields on the 2-torus represented by their Fourier coefficients.

A field ``f`` with cutoff ``M`` is stored as a dense complex array of shape
``(2M+1, 2M+1)``; entry ``[k1+M, k2+M]`` holds ``f_k``, the coefficient of
``e_k(x) = exp(i k.x) / (2 pi)``.  Real fields satisfy ``f_{-k} = conj(f_k)``.
The centre entry is the (real) zero mode.
"""

from __future__ import annotations

import json
import math
import struct
from typing import Iterable, Mapping

import numpy as np
import scipy.fft

from .errors import DomainError

FIELD_MAGIC = b"AKFF"
FIELD_FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIId")


def lattice(M: int) -> tuple[np.ndarray, np.ndarray]:
    """Integer wavenumber grids ``(k1, k2)`` of shape ``(2M+1, 2M+1)``."""
    r = np.arange(-M, M + 1)
    k1, k2 = np.meshgrid(r, r, indexing="ij")
    return k1, k2


def knorm2(M: int) -> np.ndarray:
    k1, k2 = lattice(M)
    return (k1 * k1 + k2 * k2).astype(float)


def half_mask(M: int) -> np.ndarray:
    """Canonical representatives of the pairs ``{k, -k}``: k1 > 0, or k1 = 0 and k2 > 0."""
    k1, k2 = lattice(M)
    return (k1 > 0) | ((k1 == 0) & (k2 > 0))


def mirror(arr: np.ndarray) -> np.ndarray:
    """Return ``conj(arr[-k])`` over the last two axes."""
    return np.conj(arr[..., ::-1, ::-1])


def hermitize(arr: np.ndarray) -> np.ndarray:
    """Copy the canonical half onto the other half by conjugation; zero mode made real."""
    M = (arr.shape[-1] - 1) // 2
    mask = half_mask(M)
    out = np.where(mask, arr, mirror(np.where(mask, arr, 0)))
    out[..., M, M] = arr[..., M, M].real
    return out


def hermitian_defect(arr: np.ndarray) -> float:
    return float(np.max(np.abs(arr - mirror(arr)), initial=0.0))


class FourierField:
    """Immutable Hermitian coefficient array on the box ``|k|_inf <= M``."""

    __slots__ = ("_coeffs",)

    def __init__(self, coeffs: np.ndarray, *, check: bool = True, atol: float = 1e-12):
        c = np.array(coeffs, dtype=np.complex128)
        if c.ndim != 2 or c.shape[0] != c.shape[1] or c.shape[0] % 2 != 1:
            raise DomainError(f"coefficient array must be (2M+1, 2M+1), got {c.shape}")
        if check:
            scale = max(1.0, float(np.max(np.abs(c), initial=0.0)))
            if hermitian_defect(c) > atol * scale:
                raise DomainError("coefficients are not Hermitian symmetric")
        c = hermitize(c)
        c.flags.writeable = False
        self._coeffs = c

    @classmethod
    def zeros(cls, M: int) -> "FourierField":
        return cls(np.zeros((2 * M + 1, 2 * M + 1), complex), check=False)

    @classmethod
    def from_modes(
        cls, M: int, modes: Mapping[tuple[int, int], complex], zero_mode: float = 0.0
    ) -> "FourierField":
        """Build from values on some modes; ``-k`` receives the conjugate."""
        c = np.zeros((2 * M + 1, 2 * M + 1), complex)
        for (k1, k2), v in modes.items():
            if max(abs(k1), abs(k2)) > M:
                raise DomainError(f"mode {(k1, k2)} outside cutoff {M}")
            if (k1, k2) == (0, 0):
                raise DomainError("use zero_mode for k = 0")
            c[k1 + M, k2 + M] = v
            c[-k1 + M, -k2 + M] = np.conj(v)
        c[M, M] = zero_mode
        return cls(c)

    @property
    def coeffs(self) -> np.ndarray:
        return self._coeffs

    @property
    def M(self) -> int:
        return (self._coeffs.shape[0] - 1) // 2

    @property
    def zero_mode(self) -> float:
        return float(self._coeffs[self.M, self.M].real)

    def coeff(self, k: tuple[int, int]) -> complex:
        M = self.M
        if max(abs(k[0]), abs(k[1])) > M:
            return 0j
        return complex(self._coeffs[k[0] + M, k[1] + M])

    def support(self, tol: float = 0.0) -> list[tuple[int, int]]:
        k1, k2 = lattice(self.M)
        nz = np.abs(self._coeffs) > tol
        return list(zip(k1[nz].tolist(), k2[nz].tolist()))

    def embed(self, M: int) -> "FourierField":
        """Same field with storage extent ``M`` (modes beyond ``M`` are dropped)."""
        return type(self)(embed_array(self._coeffs, M), check=False)

    def pair(self, other: "FourierField") -> float:
        """L2 pairing ``sum_k f_k g_{-k}``."""
        M = min(self.M, other.M)
        a = embed_array(self._coeffs, M)
        b = embed_array(other._coeffs, M)
        return float(np.sum(a * np.conj(b)).real)

    def to_physical(self, grid: int | None = None) -> np.ndarray:
        """Values on the uniform ``grid x grid`` mesh of ``[0, 2 pi)^2``."""
        return to_physical(self._coeffs, grid)

    def __add__(self, other: "FourierField") -> "FourierField":
        M = max(self.M, other.M)
        return type(self)(embed_array(self._coeffs, M) + embed_array(other._coeffs, M), check=False)

    def __sub__(self, other: "FourierField") -> "FourierField":
        return self + (-1.0) * other

    def __mul__(self, scalar: float) -> "FourierField":
        if isinstance(scalar, complex) and scalar.imag != 0:
            raise DomainError("complex scaling breaks Hermitian symmetry")
        return type(self)(self._coeffs * float(np.real(scalar)), check=False)

    __rmul__ = __mul__

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FourierField):
            return NotImplemented
        M = max(self.M, other.M)
        return bool(np.array_equal(embed_array(self._coeffs, M), embed_array(other._coeffs, M)))

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        return f"{type(self).__name__}(M={self.M}, nonzero={len(self.support())})"

    # serialization

    def to_bytes(self) -> bytes:
        M = self.M
        header = _HEADER.pack(FIELD_MAGIC, FIELD_FORMAT_VERSION, M, self.zero_mode)
        payload = self._coeffs[half_mask(M)].astype("<c8").tobytes()
        return header + payload

    @classmethod
    def from_bytes(cls, data: bytes) -> "FourierField":
        if len(data) < _HEADER.size:
            raise DomainError("truncated field header")
        magic, version, M, zero = _HEADER.unpack_from(data)
        if magic != FIELD_MAGIC:
            raise DomainError("not a field file")
        if version != FIELD_FORMAT_VERSION:
            raise DomainError(f"unsupported field format version {version}")
        mask = half_mask(M)
        n = int(mask.sum())
        vals = np.frombuffer(data, dtype="<c8", count=n, offset=_HEADER.size)
        c = np.zeros((2 * M + 1, 2 * M + 1), complex)
        c[mask] = vals
        c[M, M] = zero
        return cls(hermitize(c), check=False)

    def to_json(self) -> str:
        M = self.M
        k1, k2 = lattice(M)
        mask = half_mask(M) & (self._coeffs != 0)
        modes = [
            [int(a), int(b), float(v.real), float(v.imag)]
            for a, b, v in zip(k1[mask], k2[mask], self._coeffs[mask])
        ]
        return json.dumps({"M": M, "zero_mode": self.zero_mode, "modes": modes})

    @classmethod
    def from_json(cls, text: str) -> "FourierField":
        d = json.loads(text)
        modes = {(int(a), int(b)): complex(re, im) for a, b, re, im in d["modes"]}
        return cls.from_modes(int(d["M"]), modes, float(d.get("zero_mode", 0.0)))


class TestFunction(FourierField):
    """Finitely supported real test function; ``||.||_{1,2}`` is always finite."""

    __slots__ = ()
    __test__ = False  # keep pytest from collecting it

    @classmethod
    def mode_pair(cls, k: tuple[int, int], amplitude: complex = 1.0, M: int | None = None) -> "TestFunction":
        """``amplitude * e_k + conj(amplitude) * e_{-k}``."""
        M = max(abs(k[0]), abs(k[1])) if M is None else M
        return cls.from_modes(M, {tuple(k): amplitude})

    @property
    def h1_norm(self) -> float:
        return sobolev_norm(self, 1.0)


def embed_array(arr: np.ndarray, M: int) -> np.ndarray:
    """Pad or crop the last two axes of a coefficient array to cutoff ``M``."""
    M0 = (arr.shape[-1] - 1) // 2
    if M == M0:
        return arr
    if M < M0:
        s = slice(M0 - M, M0 + M + 1)
        return arr[..., s, s].copy()
    out = np.zeros(arr.shape[:-2] + (2 * M + 1, 2 * M + 1), dtype=arr.dtype)
    s = slice(M - M0, M + M0 + 1)
    out[..., s, s] = arr
    return out


def to_physical(coeffs: np.ndarray, grid: int | None = None) -> np.ndarray:
    M = (coeffs.shape[-1] - 1) // 2
    G = grid if grid is not None else 2 * M + 1
    if G < 2 * M + 1:
        raise DomainError(f"grid {G} too coarse for cutoff {M}")
    X = np.zeros(coeffs.shape[:-2] + (G, G), complex)
    idx = np.arange(-M, M + 1) % G
    X[..., idx[:, None], idx[None, :]] = coeffs
    return scipy.fft.ifft2(X, axes=(-2, -1)).real * (G * G / (2 * np.pi))


def white_noise_array(M: int, rng: np.random.Generator, batch: int | None = None) -> np.ndarray:
    """Hermitian standard complex Gaussian coefficients, zero mode 0."""
    if M < 1:
        raise DomainError("M must be >= 1")
    shape = (2 * M + 1, 2 * M + 1) if batch is None else (batch, 2 * M + 1, 2 * M + 1)
    z = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * math.sqrt(0.5)
    z[..., M, M] = 0
    return hermitize(z)


def sample_white_noise(M: int, rng: np.random.Generator) -> FourierField:
    return FourierField(white_noise_array(M, rng), check=False)


def sample_gff(M: int, rng: np.random.Generator) -> FourierField:
    """Gaussian free field: white-noise coefficients divided by ``|k|``."""
    z = white_noise_array(M, rng)
    k2 = knorm2(M)
    k2[M, M] = 1.0
    return FourierField(z / np.sqrt(k2), check=False)


def project(f: FourierField, N: int) -> FourierField:
    """Zero all coefficients with ``|k|_inf > N``."""
    if N >= f.M:
        return f
    return FourierField(embed_array(embed_array(f.coeffs, max(N, 0)), f.M), check=False)


def frac_laplacian(f: FourierField, theta: float) -> FourierField:
    """Fourier multiplier ``|k|^(2 theta)``."""
    if theta == 0:
        return f
    M = f.M
    if theta < 0 and f.zero_mode != 0:
        raise DomainError("negative power of the Laplacian needs a zero-mean field")
    k2 = knorm2(M)
    k2[M, M] = 1.0
    mult = k2**theta
    mult[M, M] = 0.0
    return type(f)(f.coeffs * mult, check=False)


def sobolev_norm(f: FourierField, alpha: float, homogeneous: bool = True) -> float:
    """``(sum_k w_k^alpha |f_k|^2)^(1/2)`` with ``w = |k|^2`` (zero mode dropped) or ``1+|k|^2``."""
    M = f.M
    k2 = knorm2(M)
    a2 = np.abs(f.coeffs) ** 2
    if homogeneous:
        k2[M, M] = 1.0
        w = k2**alpha
        w[M, M] = 0.0
    else:
        w = (1.0 + k2) ** alpha
    return math.sqrt(float(np.sum(w * a2)))


def dyadic_blocks(M: int) -> list[tuple[int, np.ndarray]]:
    """Sharp Littlewood-Paley annuli: ``j=-1`` is ``|k| < 1``, else ``2^j <= |k| < 2^(j+1)``."""
    k = np.sqrt(knorm2(M))
    blocks = [(-1, k < 1)]
    j = 0
    while 2.0**j <= k.max():
        blocks.append((j, (k >= 2.0**j) & (k < 2.0 ** (j + 1))))
        j += 1
    return blocks


def besov_norm(f: FourierField, alpha: float, oversample: int = 4) -> float:
    """``max_j 2^(alpha j) sup_x |Delta_j f(x)|`` with sup over an oversampled grid."""
    M = f.M
    G = scipy.fft.next_fast_len(oversample * (2 * M + 1))
    best = 0.0
    for j, mask in dyadic_blocks(M):
        if not np.any(f.coeffs[mask]):
            continue
        vals = to_physical(np.where(mask, f.coeffs, 0), G)
        best = max(best, 2.0 ** (alpha * j) * float(np.max(np.abs(vals))))
    return best


def fields_from_batch(arr: np.ndarray) -> Iterable[FourierField]:
    for a in arr:
        yield FourierField(a, check=False)
