"""Experiment reports: verdicts, estimate tables and their on-disk bundle."""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..kernels import KernelParams
from ..stats import Estimate

PASS, FAIL, INCONCLUSIVE = "pass", "fail", "inconclusive"


def _num(x):
    """17 significant digits for CSV cells."""
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return x


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (complex, np.complexfloating)):
        return [float(x.real), float(x.imag)]
    if isinstance(x, KernelParams):
        return asdict(x)
    if isinstance(x, Estimate):
        return x.as_dict()
    return x


@dataclass
class ExperimentReport:
    """Outcome of one experiment.

    ``estimates`` holds one row per estimated quantity (``label``, ``N``, ``value``,
    ``stderr``, ``n_samples`` plus free-form columns); ``plot`` holds
    ``(series, x, y, yerr, target)`` rows for external plotting; ``verdicts`` maps
    criterion names to pass / fail / inconclusive.
    """

    name: str
    params_grid: list[KernelParams] = field(default_factory=list)
    estimates: list[dict] = field(default_factory=list)
    fitted: dict[str, float] = field(default_factory=dict)
    verdicts: dict[str, str] = field(default_factory=dict)
    details: dict[str, str] = field(default_factory=dict)
    runtime: float = 0.0
    seed: int | None = None
    config: dict = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)
    plot: list[dict] = field(default_factory=list)

    def add_estimate(self, label: str, est: Estimate | float, **extra) -> None:
        if isinstance(est, Estimate):
            row = {"label": label, "value": est.value, "stderr": est.stderr, "n_samples": est.n_samples}
        else:
            row = {"label": label, "value": float(est), "stderr": 0.0, "n_samples": 0}
        row.update(extra)
        self.estimates.append(row)

    def add_point(self, series: str, x: float, y: float, yerr: float = 0.0, target: float = math.nan) -> None:
        self.plot.append({"series": series, "x": x, "y": y, "yerr": yerr, "target": target})

    def set_verdict(self, criterion: str, verdict: str, detail: str = "") -> None:
        self.verdicts[criterion] = verdict
        if detail:
            self.details[criterion] = detail

    def set_check(self, criterion: str, ok: bool, detail: str = "") -> None:
        self.set_verdict(criterion, PASS if ok else FAIL, detail)

    @property
    def passed(self) -> bool:
        return all(v == PASS for v in self.verdicts.values())

    def summary_lines(self) -> list[str]:
        out = []
        for k, v in self.verdicts.items():
            d = self.details.get(k, "")
            out.append(f"{self.name}:{k}: {v.upper()}" + (f"  ({d})" if d else ""))
        return out

    def to_dict(self) -> dict:
        return _jsonable(
            {
                "name": self.name,
                "params_grid": self.params_grid,
                "estimates": self.estimates,
                "fitted": self.fitted,
                "verdicts": self.verdicts,
                "details": self.details,
                "runtime_seconds": self.runtime,
                "seed": self.seed,
                "config": self.config,
                "notes": self.notes,
            }
        )

    def to_json(self) -> str:
        # floats use the shortest repr that round-trips the double exactly
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)

    def write(self, out_dir: str | os.PathLike) -> dict[str, Path]:
        """Writes ``<name>.json``, ``<name>_estimates.csv`` and ``<name>_plot.csv``."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "json": out / f"{self.name}.json",
            "estimates": out / f"{self.name}_estimates.csv",
            "plot": out / f"{self.name}_plot.csv",
        }
        paths["json"].write_text(self.to_json() + "\n")
        _write_csv(paths["estimates"], self.estimates, ["label", "N", "value", "stderr", "n_samples"])
        _write_csv(paths["plot"], self.plot, ["series", "x", "y", "yerr", "target"])
        return paths


def _write_csv(path: Path, rows: list[dict], first: list[str]) -> None:
    cols = list(first)
    for r in rows:
        for k in r:
            if k not in cols:
                cols.append(k)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, restval="")
        w.writeheader()
        for r in rows:
            w.writerow({k: _num(v) for k, v in _jsonable(r).items()})
