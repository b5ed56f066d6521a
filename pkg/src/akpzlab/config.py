"""Tolerance bands and run configuration files (INI with sections)."""

from __future__ import annotations

import configparser
import os
from importlib import resources
from pathlib import Path

from .errors import ConfigError

ENV_PREFIX = "AKPZ_"


def _parser() -> configparser.ConfigParser:
    # keys keep their case so that N and n stay distinct
    p = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    p.optionxform = str
    return p


def load_tolerances(path: str | os.PathLike | None = None) -> configparser.ConfigParser:
    """Packaged tolerance file, optionally overlaid by ``path`` (which may only change known keys)."""
    p = _parser()
    p.read_string(resources.files("akpzlab").joinpath("data/tolerances.ini").read_text())
    if path is not None:
        over = _parser()
        _read_file(over, path)
        for sec in over.sections():
            if not p.has_section(sec):
                raise ConfigError(f"unknown tolerance section [{sec}]")
            for key, val in over.items(sec):
                if not p.has_option(sec, key):
                    raise ConfigError(f"unknown tolerance key {sec}.{key}")
                p.set(sec, key, val)
    return p


_TOL = None


def tolerance(section: str, key: str) -> float:
    global _TOL
    if _TOL is None:
        _TOL = load_tolerances()
    try:
        return _TOL.getfloat(section, key)
    except (configparser.NoSectionError, configparser.NoOptionError) as e:
        raise ConfigError(str(e)) from None


def tolerance_version() -> int:
    return int(tolerance("meta", "version"))


def _read_file(p: configparser.ConfigParser, path: str | os.PathLike) -> None:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        p.read_string(path.read_text(), source=str(path))
    except configparser.Error as e:
        raise ConfigError(f"malformed config {path}: {e}") from None


def read_run_config(path: str | os.PathLike, allowed: dict[str, dict[str, type]]) -> dict[str, dict]:
    """Reads ``path`` and converts values by ``allowed[section][key]``.

    Unknown sections or keys are errors.  Tuple-typed keys take comma-separated values.
    """
    p = _parser()
    _read_file(p, path)
    out: dict[str, dict] = {}
    for sec in p.sections():
        if sec not in allowed:
            raise ConfigError(f"unknown section [{sec}] in {path}; expected one of {sorted(allowed)}")
        out[sec] = {}
        for key, raw in p.items(sec):
            if key not in allowed[sec]:
                raise ConfigError(f"unknown key {key!r} in [{sec}]; expected one of {sorted(allowed[sec])}")
            out[sec][key] = convert(raw, allowed[sec][key], f"{sec}.{key}")
    return out


def convert(raw: str, typ, name: str):
    try:
        if typ is bool:
            v = raw.strip().lower()
            if v in ("1", "true", "yes", "on"):
                return True
            if v in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(typ, tuple):
            items = [s for s in (x.strip() for x in raw.split(",")) if s]
            return tuple(typ[0](x) for x in items)
        return typ(raw.strip())
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {name}") from None


def env_overrides(environ=None) -> dict[str, str]:
    """``AKPZ_SEED``, ``AKPZ_THREADS``, ``AKPZ_OUT``, ``AKPZ_CONFIG`` as lower-case option names."""
    environ = os.environ if environ is None else environ
    return {k[len(ENV_PREFIX):].lower(): v for k, v in environ.items() if k.startswith(ENV_PREFIX)}
