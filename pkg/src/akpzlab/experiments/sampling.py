"""Stationary simulations recorded on every integrator node, and estimators over time windows.

Under the stationary law every window ``[s, s + T]`` of a trajectory is a sample
of the process started at stationarity, so increments ``X(s + t) - X(s)`` over
many overlapping windows estimate moments of ``X_t - X_0``.  Overlapping windows
are strongly correlated; error bars therefore use batch means over contiguous
runs of windows (at least 20 batches).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.signal

from ..dynamics import LinearNoiseMartingale, NodeValue, SimConfig, run
from ..errors import ConfigError
from ..kernels import KernelParams
from ..spectral import FourierField
from ..stats import MIN_BATCHES, Estimate, batch_means


@dataclass
class NodeSeries:
    """Per-node values of scalar observables, shape ``(n_traj, n_nodes)`` each."""

    dt: float
    values: dict[str, np.ndarray]
    cumulative: dict[str, np.ndarray] = field(default_factory=dict)
    config: SimConfig | None = None
    runtime: float = 0.0

    @property
    def n_nodes(self) -> int:
        return next(iter(self.values.values())).shape[1]


def cumulative_trapezoid(y: np.ndarray, dt: float) -> np.ndarray:
    """Running trapezoid integral along the last axis, starting at 0."""
    out = np.zeros_like(y, dtype=float)
    out[..., 1:] = np.cumsum(0.5 * dt * (y[..., 1:] + y[..., :-1]), axis=-1)
    return out


def pairing_drift(phi: FourierField, N: int):
    """``(u, lam N(u)) -> lam N(u)(phi)`` on a batch."""
    W = 2 * N + 1
    arr = np.zeros((W, W), complex)
    M = phi.M
    if M > N:
        raise ConfigError("test function exceeds the simulation cutoff")
    arr[N - M:N + M + 1, N - M:N + M + 1] = phi.coeffs
    w = np.conj(arr)

    def fn(u, drift_u):
        return np.einsum("bij,ij->b", drift_u, w).real

    return fn


def run_node_series(
    cfg: SimConfig,
    observables: dict[str, tuple],
    noise_phi: FourierField | None = None,
) -> NodeSeries:
    """Runs ``cfg`` recording each ``name -> (fn, needs_drift)`` at every node.

    With ``noise_phi`` the driving-noise martingale of ``u(phi)`` is recorded as well
    (under the cumulative key ``"noise"``).
    """
    import time

    cfg = replace(cfg, record_stride=1)
    obs = [NodeValue(name, fn, needs_drift=nd) for name, (fn, nd) in observables.items()]
    if noise_phi is not None:
        obs.append(LinearNoiseMartingale(noise_phi, name="noise"))
    t0 = time.perf_counter()
    rec = run(cfg, obs, keep_snapshots=False)
    values = {name: rec.extras[name]["value"] for name in observables}
    series = NodeSeries(cfg.dt, values, config=cfg)
    for name, v in values.items():
        series.cumulative[name] = cumulative_trapezoid(v, cfg.dt)
    if noise_phi is not None:
        series.cumulative["noise"] = rec.extras["noise"]["martingale"]
    series.runtime = time.perf_counter() - t0
    return series


def stationary_config(
    params: KernelParams,
    budget: float,
    T: float,
    n_traj: int,
    seed: int,
    integrator: str = "strang_rk4",
    dealias: str = "padding_3_2",
    threads: int = 1,
) -> SimConfig:
    """Stationary-start configuration with ``dt = budget / (nu N^2)`` and ``T`` rounded to whole steps."""
    dt = budget / (params.nu * params.N**2)
    n = max(1, int(round(T / dt)))
    return SimConfig(
        params, dt=dt, T=n * dt, integrator=integrator, seed=seed, dealias=dealias, batch=n_traj,
        stability_budget=max(budget, 0.5), threads=threads,
    )


# window estimators


def window_starts(n_nodes: int, max_lag: int, stride: int) -> np.ndarray:
    if max_lag >= n_nodes:
        raise ConfigError(f"window of {max_lag} steps does not fit in {n_nodes} nodes")
    return np.arange(0, n_nodes - max_lag, stride)


def increment_squares(X: np.ndarray, lags: np.ndarray, stride: int) -> np.ndarray:
    """Samples ``(X[s + lag] - X[s])^2``, shape ``(n_windows, n_lags)``, windows ordered trajectory-major."""
    lags = np.asarray(lags, int)
    starts = window_starts(X.shape[1], int(lags.max()), stride)
    out = [(X[:, starts + l] - X[:, starts]) ** 2 for l in lags]
    return np.stack(out, axis=-1).reshape(-1, len(lags))


def increment_sup(X: np.ndarray, max_lag: int, stride: int) -> np.ndarray:
    """Samples ``max_{1 <= j <= max_lag} |X[s + j] - X[s]|``, shape ``(n_windows,)``."""
    starts = window_starts(X.shape[1], max_lag, stride)
    base = X[:, starts]
    best = np.zeros_like(base)
    for j in range(1, max_lag + 1):
        np.maximum(best, np.abs(X[:, starts + j] - base), out=best)
    return best.reshape(-1)


def laplace_tail_horizon(rate: float, tail: float = 1e-3) -> float:
    """Smallest ``T`` with ``e^{-rate T}(1 + rate T) <= tail``.

    For a process with linearly growing second moment this bounds the relative
    truncation error of the Laplace transform by ``tail``.
    """
    x = -math.log(tail)
    for _ in range(100):
        x = -math.log(tail) + math.log1p(x)
    return x / rate


def laplace_window_samples(
    F: np.ndarray, dt: float, rate: float, max_lag: int, stride: int = 1
) -> tuple[np.ndarray, np.ndarray]:
    """Per-window estimates of ``rate^2`` times the Laplace transform of ``E[(int_0^t F)^2]``.

    Route (i): ``rate^2 int_0^T e^{-rate t} (B(s+t) - B(s))^2 dt`` with ``B`` the trapezoid
    integral of ``F``.  Route (ii): ``2 F(s) int_0^T e^{-rate t} F(s+t) dt``, the
    autocorrelation form.  Both use trapezoid weights on the integrator nodes.
    """
    B = cumulative_trapezoid(F, dt)
    w = np.full(max_lag + 1, dt)
    w[0] = w[-1] = 0.5 * dt
    h = w * np.exp(-rate * dt * np.arange(max_lag + 1))
    n_valid = F.shape[1] - max_lag
    starts = np.arange(0, n_valid, stride)
    r1, r2 = [], []
    for b in range(F.shape[0]):
        Bb, Fb = B[b], F[b]
        cB2 = scipy.signal.correlate(Bb * Bb, h, mode="valid", method="fft")[:n_valid]
        cB = scipy.signal.correlate(Bb, h, mode="valid", method="fft")[:n_valid]
        cF = scipy.signal.correlate(Fb, h, mode="valid", method="fft")[:n_valid]
        base = Bb[:n_valid]
        lt = cB2 - 2 * base * cB + base * base * h.sum()
        r1.append(rate**2 * lt[starts])
        r2.append(2 * Fb[:n_valid][starts] * cF[starts])
    return np.concatenate(r1), np.concatenate(r2)


def mean_estimate(samples: np.ndarray, n_batches: int = MIN_BATCHES) -> Estimate:
    m, se = batch_means(samples, n_batches)
    return Estimate(float(m), float(se), int(np.size(samples)))


def batch_slope(x: np.ndarray, samples: np.ndarray, n_batches: int = MIN_BATCHES) -> Estimate:
    """Log-log slope of the mean of ``samples`` (columns indexed by ``x``) with a batch-means error.

    The slope of the pooled mean curve is reported; its error is the spread of
    slopes fitted to the mean curves of ``n_batches`` contiguous batches.
    """
    lx = np.log(np.asarray(x, float))
    n = samples.shape[0]
    size = n // n_batches
    if size < 1:
        raise ConfigError(f"{n} windows cannot form {n_batches} batches")
    pooled = np.polyfit(lx, np.log(samples.mean(axis=0)), 1)[0]
    per = [
        np.polyfit(lx, np.log(samples[i * size:(i + 1) * size].mean(axis=0)), 1)[0] for i in range(n_batches)
    ]
    return Estimate(float(pooled), float(np.std(per, ddof=1) / math.sqrt(n_batches)), n)
