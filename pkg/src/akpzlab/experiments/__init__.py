"""Named experiments and the options each accepts."""

from __future__ import annotations

import inspect

from ..errors import ConfigError
from .asymptotics import exp_log_asymptotics, write_sweep
from .energy import exp_energy_estimate, exp_short_time_energy
from .invariance import exp_invariance, exp_zero_mode
from .laplace import exp_laplace_sandwich, exp_variational_bound
from .qv import exp_qv_limit, exp_she_cherry
from .report import FAIL, INCONCLUSIVE, PASS, ExperimentReport

REGISTRY = {
    "qv-limit": exp_qv_limit,
    "log-asymptotics": exp_log_asymptotics,
    "invariance": exp_invariance,
    "laplace-sandwich": exp_laplace_sandwich,
    "variational-bound": exp_variational_bound,
    "zero-mode": exp_zero_mode,
    "short-time-energy": exp_short_time_energy,
    "energy-estimate": exp_energy_estimate,
    "she-cherry": exp_she_cherry,
}

# set by the command line, not by experiment option sections
_RUNTIME_ARGS = ("phi", "seed", "threads")


def lookup(name: str):
    try:
        return REGISTRY[name]
    except KeyError:
        raise ConfigError(f"unknown experiment {name!r}; available: {', '.join(sorted(REGISTRY))}") from None


def option_types(name: str) -> dict[str, type | tuple]:
    """Config-file types of an experiment's keyword options, inferred from their defaults.

    Sequence defaults become comma-separated lists; dict-valued options are not
    settable from a file.
    """
    out: dict[str, type | tuple] = {}
    for pname, par in inspect.signature(lookup(name)).parameters.items():
        d = par.default
        if pname in _RUNTIME_ARGS or isinstance(d, dict):
            continue
        if isinstance(d, bool):
            out[pname] = bool
        elif isinstance(d, int):
            out[pname] = int
        elif isinstance(d, float):
            out[pname] = float
        elif isinstance(d, tuple) and d:
            out[pname] = (type(d[0]),)
    return out


def resolve(name: str, overrides: dict | None = None) -> dict:
    """Defaults of ``name`` updated by ``overrides``; empty grids are rejected."""
    fn = lookup(name)
    types = option_types(name)
    opts = {}
    for pname, par in inspect.signature(fn).parameters.items():
        if pname in types:
            opts[pname] = par.default
    for key, val in (overrides or {}).items():
        if key not in types:
            raise ConfigError(f"experiment {name!r} has no option {key!r}; options: {', '.join(sorted(types))}")
        opts[key] = val
    for key in ("Ns", "rates"):
        if key in opts and not opts[key]:
            raise ConfigError(f"empty grid for {name}.{key}")
    return opts


def run_experiment(name: str, overrides: dict | None = None, seed: int | None = None,
                   threads: int = 1) -> ExperimentReport:
    fn = lookup(name)
    kwargs = resolve(name, overrides)
    params = inspect.signature(fn).parameters
    if "seed" in params:
        kwargs["seed"] = seed
    if "threads" in params:
        kwargs["threads"] = threads
    return fn(**kwargs)


__all__ = [
    "FAIL",
    "INCONCLUSIVE",
    "PASS",
    "REGISTRY",
    "ExperimentReport",
    "exp_energy_estimate",
    "exp_invariance",
    "exp_laplace_sandwich",
    "exp_log_asymptotics",
    "exp_qv_limit",
    "exp_she_cherry",
    "exp_short_time_energy",
    "exp_variational_bound",
    "exp_zero_mode",
    "lookup",
    "option_types",
    "resolve",
    "run_experiment",
    "write_sweep",
]
