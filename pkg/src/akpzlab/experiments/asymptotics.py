"""Logarithmic growth of the lattice sums and their sweep table."""

from __future__ import annotations

import csv
import math
import os
import time
from pathlib import Path

from ..config import tolerance
from ..kernels import increment_slope, sigma_energy, sigma_variational, sigma_zero_mode
from .common import Timer
from .report import ExperimentReport

ENERGY_TARGET = math.pi / 4
ZERO_MODE_TARGET = math.pi
SWEEP_COLUMNS = [
    "N", "k", "sigma_energy", "sigma_variational", "sigma_zero_mode", "ratio_to_log", "target_constant",
    "zero_mode_ratio_to_log", "zero_mode_target",
]
TRUNCATION_MARKER = "# truncated"


def sweep_row(N: int, k: tuple[int, int]) -> dict:
    e = sigma_energy(k, N)
    return {
        "N": N,
        "k": f"{k[0]} {k[1]}",
        "sigma_energy": e,
        "sigma_variational": sigma_variational(k, N),
        "sigma_zero_mode": (z := sigma_zero_mode(N)),
        "ratio_to_log": e / math.log(N),
        "target_constant": ENERGY_TARGET,
        "zero_mode_ratio_to_log": z / math.log(N),
        "zero_mode_target": ZERO_MODE_TARGET,
    }


def _fmt(v):
    return format(v, ".17g") if isinstance(v, float) else str(v)


def write_sweep(path: str | os.PathLike, Ns, k=(1, 0), max_seconds: float | None = None) -> tuple[list[dict], bool]:
    """Appends one row per cutoff to the CSV at ``path``; rows already present are kept.

    Rerunning after an interruption completes the table and yields the same file.
    If ``max_seconds`` runs out, a truncation marker line is written and the
    second return value is ``False``.
    """
    path = Path(path)
    done: dict[int, dict] = {}
    if path.exists():
        with open(path, newline="") as fh:
            lines = [ln for ln in fh if not ln.startswith(TRUNCATION_MARKER)]
        for row in csv.DictReader(lines):
            done[int(row["N"])] = row
        # rewrite without any stale truncation marker
        with open(path, "w", newline="") as fh:
            fh.writelines(lines)
    else:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            csv.writer(fh).writerow(SWEEP_COLUMNS)
    t0 = time.perf_counter()
    complete = True
    rows = []
    for N in Ns:
        if N in done:
            rows.append(done[N])
            continue
        if max_seconds is not None and time.perf_counter() - t0 > max_seconds:
            with open(path, "a", newline="") as fh:
                fh.write(f"{TRUNCATION_MARKER} before N={N}: time limit of {max_seconds:g} s reached\n")
            complete = False
            break
        row = sweep_row(N, k)
        with open(path, "a", newline="") as fh:
            csv.writer(fh).writerow([_fmt(row[c]) for c in SWEEP_COLUMNS])
        rows.append(row)
    return rows, complete


def exp_log_asymptotics(Ns=tuple(2**j for j in range(8, 15)), k=(1, 0)) -> ExperimentReport:
    """Increment fits of ``sigma_energy`` and ``sigma_zero_mode`` against ``log N``.

    The fitted coefficients must be within the tolerance of ``pi/4`` and ``pi``.
    ``sigma_variational`` is reported with its own coefficient.
    """
    rel = tolerance("A5", "rel")
    rep = ExperimentReport("log_asymptotics", config={"Ns": list(Ns), "k": list(k)})
    with Timer() as tm:
        rows = [sweep_row(N, k) for N in Ns]
        for r in rows:
            rep.add_estimate("sigma_energy", r["sigma_energy"], N=r["N"])
            rep.add_estimate("sigma_variational", r["sigma_variational"], N=r["N"])
            rep.add_estimate("sigma_zero_mode", r["sigma_zero_mode"], N=r["N"])
            rep.add_point("sigma_energy_over_log", r["N"], r["ratio_to_log"], 0.0, ENERGY_TARGET)
            rep.add_point("sigma_zero_mode_over_log", r["N"], r["zero_mode_ratio_to_log"], 0.0, ZERO_MODE_TARGET)
        for name, target in (("sigma_energy", ENERGY_TARGET), ("sigma_zero_mode", ZERO_MODE_TARGET),
                             ("sigma_variational", 2 * ENERGY_TARGET)):
            slope = increment_slope(Ns, [r[name] for r in rows])
            rep.fitted[f"{name}_log_coefficient"] = slope
            rep.fitted[f"{name}_ratio_to_target"] = slope / target
            if name != "sigma_variational":
                rep.set_check(name, abs(slope / target - 1) <= rel,
                              f"coefficient {slope:.5f} vs {target:.5f} (ratio {slope / target:.4f})")
    rep.runtime = tm.elapsed
    return rep
