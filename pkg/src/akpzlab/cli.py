"""Command line: identity suites, lattice-sum sweeps, single simulations and named experiments.

Settings are resolved in increasing priority: built-in defaults, the ``--config``
file (or ``AKPZ_CONFIG``), ``AKPZ_SEED`` / ``AKPZ_THREADS`` / ``AKPZ_OUT``, then flags.

Exit codes: 0 every criterion passed, 1 a criterion failed or was inconclusive,
2 usage or configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .config import convert, env_overrides, read_run_config, tolerance, tolerance_version
from .errors import ConfigError, DomainError, NumericalError
from .experiments import REGISTRY, option_types, resolve, run_experiment
from .experiments.asymptotics import ENERGY_TARGET, ZERO_MODE_TARGET, write_sweep
from .experiments.common import default_phi, fresh_seed
from .experiments.report import ExperimentReport

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3

RUN_KEYS = {"seed": int, "threads": int, "out": str}
VERIFY_KEYS = {"N": int, "suites": (str,)}
ASYMPTOTICS_KEYS = {"max_N": int, "min_N": int, "k": (int,), "max_seconds": float}
SIMULATE_KEYS = {
    "N": int, "lam": float, "nu": float, "C": float, "scaling": str, "budget": float, "T": float,
    "batch": int, "record_stride": int, "dealias": str, "integrator": str, "checkpoint_every": int,
}
SIMULATE_DEFAULTS = {
    "N": 8, "lam": 1.0, "nu": 1.0, "C": 1.0, "scaling": "wolf", "budget": 0.25, "T": 1.0,
    "batch": 4, "record_stride": 16, "dealias": "padding_3_2", "integrator": "strang_rk4", "checkpoint_every": 0,
}


class UsageError(ConfigError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with a [run] section and a section for the command")
    common.add_argument("--seed", type=int, help="root seed (generated and recorded if omitted)")
    common.add_argument("--threads", type=int, help="FFT worker threads")
    common.add_argument("--out", help="output directory (default: akpz_out)")
    common.add_argument("--dry-run", action="store_true", help="print the resolved settings and stop")

    p = _Parser(prog="akpzlab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    v = sub.add_parser("verify-kernels", parents=[common], help="exact identity suites")
    v.add_argument("--N", type=int, help="cutoff for the orbit and Poisson suites (default 8)")
    a = sub.add_parser("asymptotics", parents=[common], help="resumable sweep of the lattice sums")
    a.add_argument("--max-N", type=int, help="largest cutoff, a power of two (default 2^14)")
    a.add_argument("--max-seconds", type=float, help="stop and mark the table truncated after this long")
    s = sub.add_parser("simulate", parents=[common], help="one batch of trajectories")
    s.add_argument("--resume", action="store_true", help="continue from the checkpoint in the output directory")
    e = sub.add_parser("experiment", parents=[common], help="run a named experiment")
    e.add_argument("name", help="one of: " + ", ".join(sorted(REGISTRY)))
    return p


def _settings(args, section: str | None, keys: dict, environ) -> tuple[dict, dict]:
    env = env_overrides(environ)
    path = args.config or env.get("config")
    run_cfg, cmd_cfg = {}, {}
    if path:
        allowed = {"run": RUN_KEYS}
        if section is not None:
            allowed[section] = keys
        cfg = read_run_config(path, allowed)
        run_cfg, cmd_cfg = cfg.get("run", {}), cfg.get(section, {}) if section else {}
    for key in RUN_KEYS:
        if key in env:
            run_cfg[key] = convert(env[key], RUN_KEYS[key], f"AKPZ_{key.upper()}")
        flag = getattr(args, key)
        if flag is not None:
            run_cfg[key] = flag
    run_cfg.setdefault("threads", 1)
    run_cfg.setdefault("out", "akpz_out")
    if run_cfg["threads"] < 1:
        raise ConfigError("threads must be >= 1")
    if run_cfg.get("seed") is None:
        run_cfg["seed"] = fresh_seed()
    if not 0 <= run_cfg["seed"] < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    return run_cfg, cmd_cfg


def _print_plan(command: str, run_cfg: dict, options: dict) -> None:
    print(json.dumps({"command": command, "run": run_cfg, "options": options}, indent=2, default=list))


def _finish(rep: ExperimentReport, out: str) -> int:
    paths = rep.write(out)
    for line in rep.summary_lines():
        print(line)
    print(f"seed {rep.seed}; report written to {paths['json']}")
    return EXIT_PASS if rep.passed else EXIT_FAIL


def cmd_verify_kernels(args, environ) -> int:
    from .verify import verify_kernels

    run_cfg, opts = _settings(args, "verify", VERIFY_KEYS, environ)
    if args.N is not None:
        opts["N"] = args.N
    opts.setdefault("N", 8)
    if args.dry_run:
        _print_plan("verify-kernels", run_cfg, opts)
        return EXIT_PASS
    rep = verify_kernels(N=opts["N"], seed=run_cfg["seed"], suites=opts.get("suites"))
    return _finish(rep, run_cfg["out"])


def cmd_asymptotics(args, environ) -> int:
    from .kernels import increment_slope

    run_cfg, opts = _settings(args, "asymptotics", ASYMPTOTICS_KEYS, environ)
    if args.max_N is not None:
        opts["max_N"] = args.max_N
    if args.max_seconds is not None:
        opts["max_seconds"] = args.max_seconds
    lo, hi = opts.get("min_N", 2**8), opts.get("max_N", 2**14)
    Ns = [2**j for j in range(max(1, math.ceil(math.log2(lo))), int(math.log2(hi)) + 1)] if hi >= 2 else []
    if not Ns or Ns[0] > hi:
        raise ConfigError(f"empty cutoff grid between {lo} and {hi}")
    k = tuple(opts.get("k", (1, 0)))
    if len(k) != 2 or k == (0, 0):
        raise ConfigError("k must be a nonzero pair like '1, 0'")
    path = Path(run_cfg["out"]) / "asymptotics.csv"
    if args.dry_run:
        _print_plan("asymptotics", run_cfg, {"Ns": Ns, "k": k, "csv": str(path), **opts})
        return EXIT_PASS
    rows, complete = write_sweep(path, Ns, k, opts.get("max_seconds"))
    print(f"table written to {path}")
    if not complete:
        print(f"truncated after {len(rows)} of {len(Ns)} cutoffs; rerun to resume")
        return EXIT_FAIL
    if len(rows) < 2:
        print("need at least two cutoffs for a log fit")
        return EXIT_FAIL
    rel = tolerance("A5", "rel")
    ok = True
    for col, target in (("sigma_energy", ENERGY_TARGET), ("sigma_zero_mode", ZERO_MODE_TARGET)):
        slope = increment_slope([int(r["N"]) for r in rows], [float(r[col]) for r in rows])
        good = abs(slope / target - 1) <= rel
        ok &= good
        print(f"asymptotics:{col}: {'PASS' if good else 'FAIL'}  (log coefficient {slope:.5f}, target {target:.5f})")
    return EXIT_PASS if ok else EXIT_FAIL


def cmd_simulate(args, environ) -> int:
    from .dynamics import LinearNoiseMartingale, NonlinearityIntegral, SimConfig, ZeroModeHeight, run
    from .kernels import KernelParams

    run_cfg, opts = _settings(args, "simulate", SIMULATE_KEYS, environ)
    o = {**SIMULATE_DEFAULTS, **opts}
    if o["scaling"] == "wolf":
        p = KernelParams.wolf(o["N"], o["C"], o["nu"])
    elif o["scaling"] == "fixed":
        p = KernelParams(N=o["N"], lam=o["lam"], nu=o["nu"], C=o["C"])
    else:
        raise ConfigError("scaling must be 'wolf' or 'fixed'")
    dt = o["budget"] / (p.nu * p.N**2)
    n = max(1, int(round(o["T"] / dt)))
    cfg = SimConfig(p, dt=dt, T=n * dt, seed=run_cfg["seed"], dealias=o["dealias"], integrator=o["integrator"],
                    batch=o["batch"], record_stride=o["record_stride"], threads=run_cfg["threads"])
    out = Path(run_cfg["out"])
    if args.dry_run:
        _print_plan("simulate", run_cfg, {**o, "lam_resolved": p.lam, "dt": dt, "n_steps": n})
        return EXIT_PASS
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "checkpoint.npz"
    phi = default_phi()
    rec = run(cfg, [NonlinearityIntegral(phi), LinearNoiseMartingale(phi), ZeroModeHeight()], keep_snapshots=False,
              checkpoint_path=ckpt if o["checkpoint_every"] or args.resume else None,
              checkpoint_every=o["checkpoint_every"], resume=args.resume)
    energy = np.sum(np.abs(rec.final_state) ** 2, axis=(1, 2))
    summary = {
        "seed": run_cfg["seed"], "tolerance_version": tolerance_version(), "params": asdict(p),
        "dt": dt, "n_steps": n, "options": o, **rec.summary(),
        "extras": {k: {kk: vv.tolist() for kk, vv in v.items()} for k, v in rec.extras.items()},
        "final_energy": energy.tolist(), "n_modes": int(rec.final_state[0].size - 1),
    }
    (out / "simulation.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"simulated {o['batch']} trajectories, N={p.N}, lam={p.lam:.6g}, {n} steps; "
          f"mean energy per mode {energy.mean() / (rec.final_state[0].size - 1):.4f}")
    print(f"seed {run_cfg['seed']}; summary written to {out / 'simulation.json'}")
    return EXIT_PASS


def cmd_experiment(args, environ) -> int:
    if args.name not in REGISTRY:
        raise ConfigError(f"unknown experiment {args.name!r}; available: {', '.join(sorted(REGISTRY))}")
    run_cfg, opts = _settings(args, args.name, option_types(args.name), environ)
    resolved = resolve(args.name, opts)
    if args.dry_run:
        _print_plan(f"experiment {args.name}", run_cfg, resolved)
        return EXIT_PASS
    rep = run_experiment(args.name, opts, seed=run_cfg["seed"], threads=run_cfg["threads"])
    rep.config.setdefault("tolerance_version", tolerance_version())
    if rep.seed is None:
        rep.seed = run_cfg["seed"]
    return _finish(rep, run_cfg["out"])


COMMANDS = {
    "verify-kernels": cmd_verify_kernels,
    "asymptotics": cmd_asymptotics,
    "simulate": cmd_simulate,
    "experiment": cmd_experiment,
}


def main(argv=None, environ=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args, environ)
    except (ConfigError, DomainError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
