"""Monte Carlo error bars and simple fits."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

MIN_BATCHES = 20


@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float
    n_samples: int

    def z(self, target: float) -> float:
        if self.stderr > 0:
            return (self.value - target) / self.stderr
        if self.value == target:
            return 0.0
        return math.copysign(math.inf, self.value - target)

    def within(self, target: float, nsigma: float) -> bool:
        return abs(self.value - target) <= nsigma * self.stderr

    def as_dict(self) -> dict:
        return {"value": self.value, "stderr": self.stderr, "n_samples": self.n_samples}


def batch_means(samples, n_batches: int = MIN_BATCHES, axis: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Mean and batch-means standard error along ``axis``.

    Samples are split into ``n_batches`` contiguous batches of equal size (a
    remainder at the end is dropped from the error estimate only).
    """
    x = np.moveaxis(np.asarray(samples, dtype=float), axis, 0)
    n = x.shape[0]
    if n_batches < MIN_BATCHES:
        raise ValueError(f"need at least {MIN_BATCHES} batches")
    if n < n_batches:
        raise ValueError(f"{n} samples cannot form {n_batches} batches")
    size = n // n_batches
    means = x[: size * n_batches].reshape((n_batches, size) + x.shape[1:]).mean(axis=1)
    se = means.std(axis=0, ddof=1) / math.sqrt(n_batches)
    return x.mean(axis=0), se


def estimate(samples, n_batches: int = MIN_BATCHES) -> Estimate:
    m, se = batch_means(np.ravel(samples), n_batches)
    return Estimate(float(m), float(se), int(np.size(samples)))


def ratio_estimate(num, den, n_batches: int = MIN_BATCHES) -> Estimate:
    """Ratio of means with a batch-wise delta-method error."""
    num = np.ravel(np.asarray(num, float))
    den = np.ravel(np.asarray(den, float))
    n = len(num)
    size = n // n_batches
    bn = num[: size * n_batches].reshape(n_batches, size).mean(1)
    bd = den[: size * n_batches].reshape(n_batches, size).mean(1)
    r = num.mean() / den.mean()
    resid = bn - r * bd
    se = resid.std(ddof=1) / math.sqrt(n_batches) / abs(den.mean())
    return Estimate(float(r), float(se), n)


def verdict(est: Estimate, lo: float, hi: float) -> str:
    """"pass"/"fail" against ``[lo, hi]``; "inconclusive" when the error bar is too wide.

    A verdict is issued only when ``stderr < (hi - lo) / 4``.
    """
    if not est.stderr < (hi - lo) / 4:
        return "inconclusive"
    return "pass" if lo <= est.value <= hi else "fail"


def loglog_slope(x, y, yerr=None) -> tuple[float, float]:
    """Weighted least-squares slope of ``log y`` against ``log x`` and its standard error."""
    lx = np.log(np.asarray(x, float))
    ly = np.log(np.asarray(y, float))
    if yerr is None:
        w = np.ones_like(lx)
    else:
        w = (np.asarray(y, float) / np.asarray(yerr, float)) ** 2
    A = np.vstack([lx, np.ones_like(lx)]).T
    W = np.diag(w)
    cov = np.linalg.inv(A.T @ W @ A)
    coef = cov @ A.T @ W @ ly
    if yerr is None:
        resid = ly - A @ coef
        dof = max(len(lx) - 2, 1)
        cov = cov * float(resid @ resid) / dof
    return float(coef[0]), float(math.sqrt(cov[0, 0]))
