"""Experiment configuration: a versioned TOML document validated up front.

Example::

    schema = "qvelab.experiment/1"

    [profile]
    kind = "stochastic-constant"
    n = 1000

    [grid]
    tau = {start = -2.5, stop = 2.5, num = 501}
    eta = [1e-1, 1e-2]

    [samples]
    count = 4
    seed = 7

A ``[profile]`` table with ``reference = "real"`` (or ``"complex"``) and ``n``
selects the Gaussian reference ensemble instead of a variance profile.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

SCHEMA = "qvelab.experiment/1"


class ConfigError(ValueError):
    """The configuration cannot be parsed or fails validation."""


# Defaults double as the type schema of each section: a key is valid iff it appears
# here, and its value must have the same type (ints are accepted for floats).
SECTIONS: dict[str, dict[str, Any]] = {
    "solver": {"tol": 1e-10, "max_iter": 5000, "damping": 0.5, "newton_fallback": True, "polish": True},
    "grid": {
        "tau": [0.0],
        "eta": [0.1],
        "dos_tau": {"start": -2.5, "stop": 2.5, "num": 1001},
        "eta_small": 1e-6,
        "extrapolate": False,
    },
    "samples": {
        "count": 1, "seed": 0, "symmetry": "real", "distribution": "gaussian",
        "re_fraction": 0.5, "correlation": 0.0,
    },
    "checks": {
        "c": 10.0, "alpha": 0.05, "gamma": 0.1, "delta_star": 0.05, "c_star": 0.25,
        "bulk": True, "mass_tol": 1e-3, "ward_tol": 1e-10,
    },
    "output": {"dir": "out"},
    "rigidity": {
        "tau": [], "bulk_required": 0.9, "bulk_tolerance": 0.0,
        "edge_required": 0.9, "empty_gaps": True,
    },
    "delocalization": {"c": 3.0, "required": 0.99, "probes": 0, "probe_seed": 0},
    "anisotropic": {"pairs": 10, "probe_seed": 0},
    "universality": {
        "reference_count": 1, "reference_seed": 1, "window": [-0.5, 0.5], "min_rho": 0.1,
        "min_pool": 1000, "ks_max": 0.05, "bump_sigmas": 3.0,
    },
    "envelope": {"omega": [0.0], "eps_tilde": 0.0},
    "measure": {"intervals": [[-1.0, 1.0]], "eta1": 0.0, "eta2": 0.0, "eps": 0.0},
}
GRID_KEYS = ("tau", "eta", "dos_tau")


def parse_grid(value, name: str) -> np.ndarray:
    """A list of numbers or ``{start, stop, num[, log]}``."""
    if isinstance(value, list):
        try:
            arr = np.asarray(value, dtype=float)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{name}: grid values must be numbers") from exc
        if arr.ndim != 1:
            raise ConfigError(f"{name}: grid must be a flat list")
        return arr
    if isinstance(value, Mapping):
        extra = set(value) - {"start", "stop", "num", "log"}
        if extra or not {"start", "stop", "num"} <= set(value):
            raise ConfigError(f"{name}: grid table needs start, stop, num (and optional log)")
        num = value["num"]
        if not isinstance(num, int) or num < 1:
            raise ConfigError(f"{name}: num must be a positive integer")
        lo, hi = float(value["start"]), float(value["stop"])
        if value.get("log", False):
            if lo <= 0 or hi <= 0:
                raise ConfigError(f"{name}: log grid needs positive endpoints")
            return np.geomspace(lo, hi, num)
        return np.linspace(lo, hi, num)
    raise ConfigError(f"{name}: grid must be a list or a table")


def _check_type(section: str, key: str, value, default) -> None:
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, str):
        ok = isinstance(value, str)
    else:
        ok = isinstance(value, (list, dict))
    if not ok:
        raise ConfigError(f"[{section}] {key}: expected {type(default).__name__}, got {type(value).__name__}")


@dataclass
class ExperimentConfig:
    raw: dict
    profile: dict
    sections: dict[str, dict[str, Any]] = field(default_factory=dict)

    def __getitem__(self, section: str) -> dict[str, Any]:
        return self.sections[section]

    @property
    def digest(self) -> str:
        return config_hash(self.raw)

    def grid(self, key: str) -> np.ndarray:
        return parse_grid(self.sections["grid"][key], f"grid.{key}")

    @property
    def seeds(self) -> list[int]:
        s = self.sections["samples"]
        return [int(s["seed"]) ^ i for i in range(int(s["count"]))]


def config_hash(raw: Mapping) -> str:
    return hashlib.sha256(json.dumps(raw, sort_keys=True).encode()).hexdigest()


def validate(raw: Mapping, seed: int | None = None, out: str | None = None) -> ExperimentConfig:
    raw = json.loads(json.dumps(raw))  # deep copy, plain types
    if raw.get("schema") != SCHEMA:
        raise ConfigError(f"schema must be {SCHEMA!r}")
    unknown = set(raw) - set(SECTIONS) - {"schema", "profile"}
    if unknown:
        raise ConfigError(f"unknown sections: {sorted(unknown)}")
    prof = raw.get("profile")
    if not isinstance(prof, dict) or "n" not in prof:
        raise ConfigError("[profile] with at least n is required")
    if seed is not None:
        raw.setdefault("samples", {})["seed"] = int(seed)
    if out is not None:
        raw.setdefault("output", {})["dir"] = str(out)
    sections = {}
    for name, defaults in SECTIONS.items():
        given = raw.get(name, {})
        if not isinstance(given, dict):
            raise ConfigError(f"[{name}] must be a table")
        extra = set(given) - set(defaults)
        if extra:
            raise ConfigError(f"[{name}] unknown keys: {sorted(extra)}")
        merged = dict(defaults)
        for key, value in given.items():
            _check_type(name, key, value, defaults[key])
            merged[key] = value
        sections[name] = merged
    for key in GRID_KEYS:
        parse_grid(sections["grid"][key], f"grid.{key}")
    if any(e <= 0 for e in parse_grid(sections["grid"]["eta"], "grid.eta")):
        raise ConfigError("grid.eta must be positive")
    if sections["samples"]["count"] < 1:
        raise ConfigError("samples.count must be at least 1")
    c = sections["checks"]
    if not (c["c"] > 0 and 0 <= c["alpha"] < 1 and 0 < c["gamma"] < 1):
        raise ConfigError("checks: need c > 0, 0 <= alpha < 1, 0 < gamma < 1")
    for iv in sections["measure"]["intervals"]:
        if not (isinstance(iv, list) and len(iv) == 2 and all(isinstance(x, (int, float)) for x in iv)):
            raise ConfigError("measure.intervals must be a list of [tau1, tau2] pairs")
    w = sections["universality"]["window"]
    if not (len(w) == 2 and w[0] < w[1]):
        raise ConfigError("universality.window must be [lo, hi] with lo < hi")
    return ExperimentConfig(raw, prof, sections)


def load_config(path, seed: int | None = None, out: str | None = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed TOML: {exc}") from exc
    return validate(raw, seed, out)
