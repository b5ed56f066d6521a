"""Time integration of the truncated u-equation

    du_k = (-(nu/2)|k|^2 u_k + lam N_k[u]) dt + nu^(1/2) |k| dB_k,   0 < |k|_inf <= N,

with ``N_k[u] = sum_{l+m=k} K_{l,m} u_l u_m``.  The Ornstein-Uhlenbeck part is
integrated exactly; the nonlinearity is treated explicitly.  States are batches
of coefficient arrays of shape ``(B, 2N+1, 2N+1)``.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from typing import Literal, Sequence

import numpy as np
import scipy.fft
import scipy.sparse

from .errors import ConfigError, DomainError, IntegrationBlowup, ResolutionError
from .kernels import KernelParams, kernel_K_array
from .spectral import FourierField, hermitize, knorm2, lattice, mirror, white_noise_array

Integrator = Literal["exp_euler", "exp_midpoint", "strang_rk4"]
INTEGRATORS = ("exp_euler", "exp_midpoint", "strang_rk4")
Dealias = Literal["padding_2x", "padding_3_2", "direct"]
CHECKPOINT_VERSION = 1
_CHUNK = 64


def grid_size(N: int, dealias: str) -> int:
    """FFT grid for alias-free products of modes ``|k|_inf <= N`` (needs ``G >= 3N + 1``)."""
    if dealias == "padding_2x":
        G = 2 * (2 * N + 1)
    elif dealias == "padding_3_2":
        G = math.ceil(3 * (2 * N + 1) / 2)
    else:
        raise ConfigError(f"unknown dealiasing mode {dealias!r}")
    return scipy.fft.next_fast_len(G, real=True)


class QuadraticProduct:
    """Computes ``sum_{l+m=k} w(l,m) a_l a_m`` for the u- and h-nonlinearities.

    ``kind="u"`` uses ``K_{l,m}`` and drops the zero mode; ``kind="h"`` uses
    ``c(l,m)`` and keeps it.  FFT modes evaluate ``|k| ((d1 psi)^2 - (d2 psi)^2)``
    with ``psi = (-Delta)^(-1/2) u`` (or ``psi = h``) on a padded grid.
    """

    def __init__(self, N: int, dealias: str = "padding_2x", kind: str = "u", threads: int = 1,
                 grid: int | None = None):
        if kind not in ("u", "h"):
            raise ConfigError(f"unknown nonlinearity kind {kind!r}")
        self.N, self.kind, self.dealias, self.threads = N, kind, dealias, threads
        k1, k2 = lattice(N)
        k2n = knorm2(N)
        self._absk = np.sqrt(k2n)
        if kind == "u":
            inv = np.where(k2n > 0, 1.0 / np.where(k2n > 0, self._absk, 1.0), 0.0)
        else:
            inv = np.ones_like(k2n)
        self._m1 = 1j * k1 * inv
        self._m2 = 1j * k2 * inv
        if dealias == "direct":
            self._build_direct()
            return
        G = grid if grid is not None else grid_size(N, dealias)
        if G < 3 * N + 1:
            raise ConfigError(f"FFT grid {G} aliases products of modes up to {N} (need >= {3 * N + 1})")
        self.G = G
        r = np.arange(-N, N + 1)
        self._rows = r % G
        self._cols = np.arange(0, N + 1)
        self._upper = k2 >= 0

    def _build_direct(self) -> None:
        N = self.N
        r = np.arange(-N, N + 1)
        l1, l2, m1, m2 = (x.ravel() for x in np.meshgrid(r, r, r, r, indexing="ij"))
        s1, s2 = l1 + m1, l2 + m2
        ok = (np.abs(s1) <= N) & (np.abs(s2) <= N)
        l1, l2, m1, m2, s1, s2 = (x[ok] for x in (l1, l2, m1, m2, s1, s2))
        if self.kind == "u":
            w = kernel_K_array(l1, l2, m1, m2, N)
        else:
            w = (l2 * m2 - l1 * m1).astype(float)
        nz = w != 0
        W = 2 * N + 1
        self._li = ((l1 + N) * W + (l2 + N))[nz]
        self._mi = ((m1 + N) * W + (m2 + N))[nz]
        target = ((s1 + N) * W + (s2 + N))[nz]
        self._S = scipy.sparse.csr_matrix(
            (w[nz], (target, np.arange(nz.sum()))), shape=(W * W, int(nz.sum()))
        )

    def __call__(self, a: np.ndarray) -> np.ndarray:
        single = a.ndim == 2
        if single:
            a = a[None]
        if self.dealias == "direct":
            out = self._direct(a)
        else:
            # chunks keep the padded work arrays cache resident
            out = np.concatenate([self._fft(a[i:i + _CHUNK]) for i in range(0, a.shape[0], _CHUNK)])
        return out[0] if single else out

    def _direct(self, a: np.ndarray) -> np.ndarray:
        B = a.shape[0]
        W = 2 * self.N + 1
        flat = a.reshape(B, W * W)
        prods = flat[:, self._li] * flat[:, self._mi]
        out = (self._S @ prods.T).T
        return out.reshape(B, W, W)

    def _fft(self, a: np.ndarray) -> np.ndarray:
        # Pruned transforms: only the N+1 occupied half-plane columns go through
        # the column FFT, and irfft/rfft pad or truncate the other axis.
        N, G, w = self.N, self.G, self.threads
        B = a.shape[0]
        half = slice(N, 2 * N + 1)
        X = np.zeros((2, B, G, N + 1), complex)
        X[0][:, self._rows, :] = (self._m1 * a)[:, :, half]
        X[1][:, self._rows, :] = (self._m2 * a)[:, :, half]
        X = scipy.fft.ifft(X, axis=-2, norm="forward", workers=w)
        phys = scipy.fft.irfft(X, n=G, axis=-1, norm="forward", workers=w)
        sq = phys[0] * phys[0] - phys[1] * phys[1]
        P = scipy.fft.rfft(sq, axis=-1, norm="forward", workers=w)[..., : N + 1]
        P = scipy.fft.fft(P, axis=-2, norm="forward", workers=w)
        out = np.zeros((B, 2 * N + 1, 2 * N + 1), complex)
        out[:, :, half] = P[:, self._rows, :]
        out = np.where(self._upper, out, mirror(out))
        if self.kind == "u":
            out *= self._absk
        return out


def nonlinearity_u(u: FourierField, params: KernelParams, dealias: str = "padding_2x") -> FourierField:
    """``N_k = sum_{l+m=k} K_{l,m} u_l u_m`` for ``|k|_inf <= N``."""
    N = params.N
    a = _embed(u.coeffs, N)
    if u.zero_mode != 0:
        raise DomainError("u must have zero mean")
    return FourierField(QuadraticProduct(N, dealias, "u")(a), check=False)


def nonlinearity_h(h: FourierField, params: KernelParams, dealias: str = "padding_2x") -> FourierField:
    """``Pi_N ((d1 h)^2 - (d2 h)^2)`` in Fourier variables, zero mode included."""
    N = params.N
    a = _embed(h.coeffs, N)
    return FourierField(QuadraticProduct(N, dealias, "h")(a), check=False)


def _embed(arr: np.ndarray, N: int) -> np.ndarray:
    from .spectral import embed_array

    return embed_array(arr, N)


@dataclass(frozen=True)
class SimConfig:
    params: KernelParams
    dt: float
    T: float
    integrator: Integrator = "strang_rk4"
    seed: int = 0
    dealias: Dealias = "padding_2x"
    record_stride: int = 1
    batch: int = 1
    stability_budget: float = 0.5
    init: Literal["stationary", "zero"] = "stationary"
    threads: int = 1
    energy_projection: bool = True

    def __post_init__(self) -> None:
        if self.dt <= 0 or self.T <= 0:
            raise ConfigError("dt and T must be positive")
        if self.integrator not in INTEGRATORS:
            raise ConfigError(f"unknown integrator {self.integrator!r}")
        if self.dealias not in ("padding_2x", "padding_3_2", "direct"):
            raise ConfigError(f"unknown dealiasing mode {self.dealias!r}")
        if self.init not in ("stationary", "zero"):
            raise ConfigError(f"unknown initial condition {self.init!r}")
        if self.record_stride < 1 or self.batch < 1:
            raise ConfigError("record_stride and batch must be >= 1")
        p = self.params
        if self.dt * p.nu * p.N**2 > self.stability_budget * (1 + 1e-12):
            raise ConfigError(
                f"dt*nu*N^2 = {self.dt * p.nu * p.N ** 2:.4g} exceeds stability budget {self.stability_budget}"
            )
        n = self.T / self.dt
        if abs(n - round(n)) > 1e-9 * max(1.0, n):
            raise ConfigError("T must be an integer multiple of dt")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    def with_dt(self, dt: float) -> "SimConfig":
        return replace(self, dt=dt)


class Simulator:
    """Precomputed propagators for one configuration.

    Each step composes the exact Ornstein-Uhlenbeck transition with an explicit
    step of the nonlinear flow ``du/dt = lam N(u)``.  That flow conserves
    ``sum_k |u_k|^2``; with ``energy_projection`` the explicit substep is rescaled
    back onto its starting energy sphere, which removes the runaway of explicit
    schemes at grid scale.

    ``exp_euler``: explicit Euler nonlinear substep, then the OU transition.
    ``exp_midpoint``: Strang composition, OU half step, explicit midpoint
    nonlinear substep, OU half step.
    ``strang_rk4``: the same composition with a classical Runge-Kutta substep.

    Grid-scale modes of the nonlinear flow have nearly imaginary linearised
    rates of size ``~ dt nu N^2``.  Euler and midpoint amplify them by
    ``O(dt^2)`` and ``O(dt^4)`` per step and the projection hands that excess
    back to every mode uniformly, which visibly drains the large scales.  The
    Runge-Kutta substep is weakly dissipative there, so only ``strang_rk4``
    keeps white noise stationary to Monte Carlo accuracy at the default budget.
    """

    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        p = cfg.params
        N = p.N
        self.N = N
        self.nonlin = QuadraticProduct(N, cfg.dealias, "u", cfg.threads)
        self.rate = 0.5 * p.nu * knorm2(N)
        self._E, self._sig = self._propagators(cfg.dt)
        self._Eh, self._sigh = self._propagators(cfg.dt / 2)

    def _propagators(self, dt: float):
        E = np.exp(-self.rate * dt)
        sig = np.sqrt(-np.expm1(-2 * self.rate * dt))
        sig[self.N, self.N] = 0.0
        return E, sig

    @property
    def reuses_node_drift(self) -> bool:
        return self.cfg.integrator == "exp_euler"

    def initial_state(self, rng: np.random.Generator) -> np.ndarray:
        shape = (self.cfg.batch, 2 * self.N + 1, 2 * self.N + 1)
        if self.cfg.init == "zero":
            return np.zeros(shape, complex)
        return white_noise_array(self.N, rng, self.cfg.batch)

    def noise(self, rng: np.random.Generator) -> np.ndarray:
        return white_noise_array(self.N, rng, self.cfg.batch)

    def drift(self, u: np.ndarray) -> np.ndarray:
        lam = self.cfg.params.lam
        if lam == 0:
            return np.zeros_like(u)
        return lam * self.nonlin(u)

    def _project(self, v: np.ndarray, u: np.ndarray) -> np.ndarray:
        if not self.cfg.energy_projection:
            return v
        nu = np.sqrt(np.sum(np.abs(u) ** 2, axis=(-2, -1)))
        nv = np.sqrt(np.sum(np.abs(v) ** 2, axis=(-2, -1)))
        # only energy gains are removed; that is what drives the runaway
        scale = np.where(nv > nu, nu / np.where(nv > 0, nv, 1.0), 1.0)
        return v * scale[:, None, None]

    def nonlinear_substep(self, u: np.ndarray, drift_u: np.ndarray | None, dt: float) -> np.ndarray:
        if self.cfg.params.lam == 0:
            return u
        if self.cfg.integrator == "exp_euler":
            d = self.drift(u) if drift_u is None else drift_u
            v = u + dt * d
        elif self.cfg.integrator == "exp_midpoint":
            d = self.drift(u) if drift_u is None else drift_u
            v = u + dt * self.drift(u + 0.5 * dt * d)
        else:
            k1 = self.drift(u) if drift_u is None else drift_u
            k2 = self.drift(u + 0.5 * dt * k1)
            k3 = self.drift(u + 0.5 * dt * k2)
            k4 = self.drift(u + dt * k3)
            v = u + (dt / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
        return self._project(v, u)

    def step(self, u: np.ndarray, drift_u: np.ndarray | None, rng: np.random.Generator) -> np.ndarray:
        """Advance one step; ``drift_u = lam N(u)`` is reused by ``exp_euler`` if given."""
        dt = self.cfg.dt
        if self.cfg.integrator == "exp_euler":
            v = self.nonlinear_substep(u, drift_u, dt)
            return self._E * v + self._sig * self.noise(rng)
        u1 = self._Eh * u + self._sigh * self.noise(rng)
        v = self.nonlinear_substep(u1, None, dt)
        return self._Eh * v + self._sigh * self.noise(rng)


def step(state: FourierField, cfg: SimConfig, rng: np.random.Generator) -> FourierField:
    """One time step of a single trajectory."""
    sim = Simulator(replace(cfg, batch=1))
    u = _embed(state.coeffs, cfg.params.N)[None]
    new = sim.step(u, sim.drift(u), rng)
    _check_finite(new, 0)
    return FourierField(new[0], check=False)


def _check_finite(u: np.ndarray, n: int) -> None:
    if not np.isfinite(u).all():
        bad = ~np.isfinite(u)
        traj = np.unique(np.nonzero(bad)[0]).tolist()
        raise IntegrationBlowup(f"non-finite state at step {n} in trajectories {traj[:10]}")


# observables


class Observable:
    """Hook called on every integrator node with the state and its drift."""

    name: str
    needs_drift: bool = False

    def start(self, sim: Simulator, u: np.ndarray, drift_u: np.ndarray) -> None: ...

    def update(self, sim: Simulator, u: np.ndarray, drift_u: np.ndarray) -> None: ...

    def record(self) -> None: ...

    def result(self) -> dict[str, np.ndarray]:
        return {}

    def state_dict(self) -> dict[str, np.ndarray]:
        return {}

    def load_state_dict(self, d: dict[str, np.ndarray]) -> None: ...


class _Trapezoid(Observable):
    """Running trapezoid integral of a node quantity, sampled at record nodes."""

    def __init__(self, name: str):
        self.name = name

    def node_value(self, sim: Simulator, u: np.ndarray, drift_u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def start(self, sim, u, drift_u):
        self._dt = sim.cfg.dt
        self._prev = self.node_value(sim, u, drift_u)
        self._acc = np.zeros_like(self._prev)
        self._rec = []

    def update(self, sim, u, drift_u):
        v = self.node_value(sim, u, drift_u)
        self._acc = self._acc + 0.5 * self._dt * (self._prev + v)
        self._prev = v

    def record(self):
        self._rec.append(self._acc.copy())

    def result(self):
        return {"integral": np.array(self._rec).T}

    def state_dict(self):
        return {"prev": self._prev, "acc": self._acc, "rec": np.array(self._rec)}

    def load_state_dict(self, d):
        self._prev, self._acc = d["prev"], d["acc"]
        self._rec = list(d["rec"])


class NonlinearityIntegral(_Trapezoid):
    """``B_t(phi) = int_0^t lam N[u(s)](phi) ds``."""

    needs_drift = True

    def __init__(self, phi: FourierField, name: str = "B"):
        super().__init__(name)
        self.phi = phi

    def start(self, sim, u, drift_u):
        self._phi = np.conj(_embed(self.phi.coeffs, sim.N))
        super().start(sim, u, drift_u)

    def node_value(self, sim, u, drift_u):
        return np.einsum("bij,ij->b", drift_u, self._phi).real


class LinearNoiseMartingale(_Trapezoid):
    """Dynkin residual of ``u(phi)``: ``u_t(phi) - u_0(phi) - int (L0 u)(phi) + lam N(phi) ds``.

    For the u-equation this is ``nu^(1/2) int |k| dB_k phi_{-k}``, the driving-noise martingale.
    """

    def __init__(self, phi: FourierField, name: str = "noise", include_drift: bool = True):
        super().__init__(name)
        self.phi = phi
        self.include_drift = include_drift
        self.needs_drift = include_drift

    def start(self, sim, u, drift_u):
        self._phi = np.conj(_embed(self.phi.coeffs, sim.N))
        self._rate = sim.rate
        self._u0 = self._pair(u)
        super().start(sim, u, drift_u)

    def _pair(self, u):
        return np.einsum("bij,ij->b", u, self._phi).real

    def node_value(self, sim, u, drift_u):
        v = np.einsum("bij,ij->b", -self._rate * u, self._phi).real
        if self.include_drift:
            v = v + np.einsum("bij,ij->b", drift_u, self._phi).real
        return v

    def update(self, sim, u, drift_u):
        super().update(sim, u, drift_u)
        self._last = self._pair(u)

    def record(self):
        last = getattr(self, "_last", self._u0)
        self._rec.append(last - self._u0 - self._acc)

    def result(self):
        return {"martingale": np.array(self._rec).T}

    def state_dict(self):
        d = super().state_dict()
        d["u0"] = self._u0
        d["last"] = getattr(self, "_last", self._u0)
        return d

    def load_state_dict(self, d):
        super().load_state_dict(d)
        self._u0, self._last = d["u0"], d["last"]


class ZeroModeHeight(_Trapezoid):
    """Zero mode of h: ``h_0(t) = int_0^t lam Ntilde_0[h(s)] ds`` with ``h_k = u_k / |k|``."""

    def __init__(self, name: str = "h0"):
        super().__init__(name)

    def start(self, sim, u, drift_u):
        k1, k2 = lattice(sim.N)
        n2 = knorm2(sim.N)
        self._w = np.where(n2 > 0, (k1 * k1 - k2 * k2) / np.where(n2 > 0, n2, 1.0), 0.0)
        self._lam = sim.cfg.params.lam
        super().start(sim, u, drift_u)

    def node_value(self, sim, u, drift_u):
        return self._lam * np.einsum("bij,ij->b", np.abs(u) ** 2, self._w)


class NodeValue(Observable):
    """Records ``fn(u)`` (or ``fn(u, lam N(u))`` with ``needs_drift``), a length-B array, at record nodes."""

    def __init__(self, name: str, fn, needs_drift: bool = False):
        self.name = name
        self.fn = fn
        self.needs_drift = needs_drift

    def _eval(self, u, drift_u):
        return np.asarray(self.fn(u, drift_u) if self.needs_drift else self.fn(u))

    def start(self, sim, u, drift_u):
        self._cur = (u, drift_u)
        self._rec = []

    def update(self, sim, u, drift_u):
        self._cur = (u, drift_u)

    def record(self):
        self._rec.append(self._eval(*self._cur))

    def result(self):
        return {"value": np.moveaxis(np.array(self._rec), 0, -1)}

    def state_dict(self):
        return {"rec": np.array(self._rec)}

    def load_state_dict(self, d):
        self._rec = list(d["rec"])


class MartingaleObservable(Observable):
    """Forward Dynkin martingale of a degree <= 2 functional and its quadratic variation.

    ``M_t = nu^(-1/2) (F(u_t) - F(u_0) - int_0^t (L0 + A) F(u_s) ds)`` and
    ``QV_t = int_0^t E(F)(u_s) ds`` so that ``E[M_t^2] = E[QV_t]``.
    """

    needs_drift = True

    def __init__(self, F, params: KernelParams, name: str = "M", weight_rate: float = 0.0):
        from .pathwise import PathFunctional

        self.name = name
        self.pf = PathFunctional(F, params)
        self.weight_rate = weight_rate

    def start(self, sim, u, drift_u):
        self._dt = sim.cfg.dt
        self._t = 0.0
        self._F0 = self.pf.value(u)
        self._Fcur = self._F0
        self._g_prev, self._e_prev = self._node(u, drift_u)
        self._gint = np.zeros_like(self._F0)
        self._eint = np.zeros_like(self._F0)
        self._rec_M, self._rec_QV = [], []

    def _node(self, u, drift_u):
        g = self.pf.generator(u, drift_u)
        e = self.pf.energy(u)
        return g, e

    def update(self, sim, u, drift_u):
        g, e = self._node(u, drift_u)
        h = 0.5 * self._dt
        self._gint = self._gint + h * (self._g_prev + g)
        self._eint = self._eint + h * (self._e_prev + e)
        self._g_prev, self._e_prev = g, e
        self._Fcur = self.pf.value(u)

    def record(self):
        nu = self.pf.params.nu
        self._rec_M.append((self._Fcur - self._F0 - self._gint) / math.sqrt(nu))
        self._rec_QV.append(self._eint.copy())

    def result(self):
        return {"M": np.array(self._rec_M).T, "QV": np.array(self._rec_QV).T}

    def state_dict(self):
        return {
            "F0": self._F0, "Fcur": self._Fcur, "g_prev": self._g_prev, "e_prev": self._e_prev,
            "gint": self._gint, "eint": self._eint,
            "rec_M": np.array(self._rec_M), "rec_QV": np.array(self._rec_QV),
        }

    def load_state_dict(self, d):
        for k in ("F0", "Fcur", "g_prev", "e_prev", "gint", "eint"):
            setattr(self, "_" + k, d[k])
        self._rec_M, self._rec_QV = list(d["rec_M"]), list(d["rec_QV"])


@dataclass
class TrajectoryRecord:
    times: np.ndarray
    snapshots: np.ndarray | None
    B_integrals: dict[str, np.ndarray] = field(default_factory=dict)
    martingale_paths: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    extras: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)
    rng_state: dict | None = None
    final_state: np.ndarray | None = None
    config: SimConfig | None = None
    completed: bool = True

    def summary(self) -> dict:
        """JSON-friendly summary (no snapshots)."""
        return {
            "times": self.times.tolist(),
            "B_integrals": {k: v.tolist() for k, v in self.B_integrals.items()},
            "martingales": {k: {"M": m.tolist(), "QV": q.tolist()} for k, (m, q) in self.martingale_paths.items()},
            "completed": self.completed,
        }

    def snapshot_fields(self, i: int, traj: int = 0) -> FourierField:
        if self.snapshots is None:
            raise ResolutionError("run did not keep snapshots")
        return FourierField(self.snapshots[i, traj], check=False)


def _save_checkpoint(path, n, u, drift_u, rng, obs, times, snaps):
    arrays = {
        "version": np.array(CHECKPOINT_VERSION),
        "step": np.array(n),
        "u": u,
        "rng": np.frombuffer(json.dumps(rng.bit_generator.state).encode(), dtype=np.uint8),
        "times": np.array(times),
    }
    if snaps is not None:
        arrays["snaps"] = np.array(snaps)
    for o in obs:
        for k, v in o.state_dict().items():
            arrays[f"obs:{o.name}:{k}"] = np.asarray(v)
    tmp = str(path) + ".tmp.npz"
    np.savez(tmp, **arrays)
    os.replace(tmp, path)


def _load_checkpoint(path, rng, obs):
    with np.load(path) as z:
        if int(z["version"]) != CHECKPOINT_VERSION:
            raise ConfigError(f"unsupported checkpoint version {int(z['version'])}")
        rng.bit_generator.state = json.loads(bytes(z["rng"]).decode())
        states = {}
        for o in obs:
            prefix = f"obs:{o.name}:"
            states[o.name] = {k[len(prefix):]: z[k] for k in z.files if k.startswith(prefix)}
        snaps = list(z["snaps"]) if "snaps" in z.files else None
        return int(z["step"]), z["u"], states, list(z["times"]), snaps


def run(
    cfg: SimConfig,
    observables: Sequence[Observable] = (),
    *,
    keep_snapshots: bool = True,
    u0: np.ndarray | None = None,
    checkpoint_path: str | os.PathLike | None = None,
    checkpoint_every: int = 0,
    resume: bool = False,
    stop_after: int | None = None,
) -> TrajectoryRecord:
    """Integrate a batch of trajectories to ``cfg.T``.

    Observables see every integrator node; records are taken every
    ``record_stride`` steps.  With ``resume`` the run continues from
    ``checkpoint_path``; ``stop_after`` interrupts after that many steps
    (after writing a checkpoint) and is used to test resumption.
    """
    names = [o.name for o in observables]
    if len(set(names)) != len(names):
        raise ConfigError("observable names must be unique")
    sim = Simulator(cfg)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(cfg.seed)))
    stride = cfg.record_stride
    need_drift = sim.reuses_node_drift or any(o.needs_drift for o in observables)

    def node_drift(u):
        return sim.drift(u) if need_drift else None

    if resume:
        if checkpoint_path is None:
            raise ConfigError("resume needs a checkpoint path")
        n0, u, states, times, snaps = _load_checkpoint(checkpoint_path, rng, observables)
        drift_u = node_drift(u)
        for o in observables:
            # start() rebuilds derived data such as embedded test functions
            o.start(sim, u, drift_u)
            o.load_state_dict(states[o.name])
        if keep_snapshots and snaps is None:
            raise ConfigError("checkpoint holds no snapshots")
        if not keep_snapshots:
            snaps = None
    else:
        u = sim.initial_state(rng) if u0 is None else np.array(u0, dtype=complex).reshape(cfg.batch, 2 * sim.N + 1, -1)
        drift_u = node_drift(u)
        for o in observables:
            o.start(sim, u, drift_u)
            o.record()
        n0 = 0
        times = [0.0]
        snaps = [u.copy()] if keep_snapshots else None
    completed = True
    for n in range(n0 + 1, cfg.n_steps + 1):
        u = sim.step(u, drift_u, rng)
        _check_finite(u, n)
        drift_u = node_drift(u)
        for o in observables:
            o.update(sim, u, drift_u)
        if n % stride == 0 or n == cfg.n_steps:
            times.append(n * cfg.dt)
            for o in observables:
                o.record()
            if snaps is not None:
                snaps.append(u.copy())
        if checkpoint_path is not None and checkpoint_every and n % checkpoint_every == 0:
            _save_checkpoint(checkpoint_path, n, u, drift_u, rng, observables, times, snaps)
        if stop_after is not None and n - n0 >= stop_after and n < cfg.n_steps:
            if checkpoint_path is not None:
                _save_checkpoint(checkpoint_path, n, u, drift_u, rng, observables, times, snaps)
            completed = False
            break
    rec = TrajectoryRecord(
        times=np.array(times),
        snapshots=np.array(snaps) if snaps is not None else None,
        rng_state=rng.bit_generator.state,
        final_state=u,
        config=cfg,
        completed=completed,
    )
    for o in observables:
        res = o.result()
        if isinstance(o, MartingaleObservable):
            rec.martingale_paths[o.name] = (res["M"], res["QV"])
        elif isinstance(o, NonlinearityIntegral):
            rec.B_integrals[o.name] = res["integral"]
        else:
            rec.extras[o.name] = res
    return rec


def martingale_path(F, params: KernelParams, record: TrajectoryRecord) -> tuple[np.ndarray, np.ndarray]:
    """Forward martingale and QV of ``F`` recomputed from a full-resolution snapshot record."""
    snaps = _full_resolution(record)
    from .pathwise import PathFunctional

    pf = PathFunctional(F, params)
    sim = Simulator(record.config)
    dt = record.config.dt
    vals, gens, ens = [], [], []
    for u in snaps:
        d = sim.drift(u)
        vals.append(pf.value(u))
        gens.append(pf.generator(u, d))
        ens.append(pf.energy(u))
    vals, gens, ens = (np.array(x) for x in (vals, gens, ens))
    gint = _cumtrapz(gens, dt)
    M = (vals - vals[0] - gint) / math.sqrt(params.nu)
    return M.T, _cumtrapz(ens, dt).T


def _full_resolution(record: TrajectoryRecord) -> np.ndarray:
    if record.snapshots is None or record.config is None:
        raise ResolutionError("a full snapshot record is required")
    if record.config.record_stride != 1:
        raise ResolutionError("snapshots must be kept at every integrator node (record_stride = 1)")
    return record.snapshots


def _cumtrapz(y: np.ndarray, dt: float) -> np.ndarray:
    out = np.zeros_like(y)
    out[1:] = np.cumsum(0.5 * dt * (y[1:] + y[:-1]), axis=0)
    return out


def backward_residual(F, params: KernelParams, record: TrajectoryRecord) -> dict[str, np.ndarray]:
    """Forward and backward Dynkin martingales and the forward-backward identity.

    Along the reversed path the generator is ``L0 - A``.  Returns ``M`` (forward),
    ``Mhat`` (backward, indexed by reversed time), ``lhs = 2 int_0^t L0 F`` and
    ``rhs = nu^(1/2) (-M_t + Mhat_{T-t} - Mhat_T)`` on the integrator nodes.
    """
    snaps = _full_resolution(record)
    from .pathwise import PathFunctional

    pf = PathFunctional(F, params)
    sim = Simulator(record.config)
    dt = record.config.dt
    vals, l0s, As = [], [], []
    for u in snaps:
        d = sim.drift(u)
        vals.append(pf.value(u))
        l0 = pf.l0(u)
        l0s.append(l0)
        As.append(pf.generator(u, d) - l0)
    vals, l0s, As = (np.array(x) for x in (vals, l0s, As))
    sq = math.sqrt(params.nu)
    M = (vals - vals[0] - _cumtrapz(l0s + As, dt)) / sq
    rv, rl0, rA = vals[::-1], l0s[::-1], As[::-1]
    Mhat = (rv - rv[0] - _cumtrapz(rl0 - rA, dt)) / sq
    lhs = 2 * _cumtrapz(l0s, dt)
    rhs = sq * (-M + Mhat[::-1] - Mhat[-1])
    return {"M": M.T, "Mhat": Mhat.T, "lhs": lhs.T, "rhs": rhs.T}
