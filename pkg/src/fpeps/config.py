"""INI run configuration with a closed schema.

Every section and key is declared in :data:`SCHEMA`; anything else is a
:class:`ConfigError`.  Stage sections are named ``stage.0``, ``stage.1`` and
so on, and are ordered by their index.  See ``docs/config.md`` for the full
key reference.
"""

from __future__ import annotations

import configparser
import hashlib
import re
from dataclasses import dataclass, field
from pathlib import Path

from .evolution import METHODS, Schedule, Stage
from .models import KINDS, ModelSpec
from .purification import SOLVERS


class ConfigError(ValueError):
    """Raised for any schema violation; the CLI maps it to exit code 2."""


def _bool(v: str) -> bool:
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _opt_int(v: str):
    return None if v.strip().lower() in ("", "none", "auto") else int(v)


def _list(conv):
    def parse(v: str):
        return [conv(x.strip()) for x in v.replace(";", ",").split(",") if x.strip()]

    return parse


def _choice(*options):
    def parse(v: str):
        v = v.strip()
        if v not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {v!r}")
        return v

    return parse


def _cell(v: str):
    parts = v.split(":")
    if len(parts) != 3:
        raise ValueError(f"energy cell must be L:D:B, got {v!r}")
    return int(parts[0]), int(parts[1]), float(parts[2])


def _model_tag(v: str):
    kind, _, b = v.partition(":")
    if kind not in KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    return kind, float(b) if b else 0.0


_STR = str.strip
_INTS = _list(int)
_FLOATS = _list(float)

# section -> key -> (parser, default); a default of ``...`` marks a required key
SCHEMA: dict[str, dict[str, tuple]] = {
    "run": {
        "seed": (int, 0),
        "out": (_STR, "runs"),
        "threads": (int, 1),
        "observables": (_list(_choice("sz", "sx")), ["sz"]),
    },
    "model": {
        "kind": (_choice(*KINDS), ...),
        "L": (int, ...),
        "J": (float, 1.0),
        "B": (float, 0.0),
    },
    "init": {
        "state": (_choice("neel", "up", "x", "tilted"), "neel"),
        "noise": (float, 1e-2),
    },
    "schedule": {
        "noise": (float, 1e-6),
        "window": (int, 5),
        "B_Z_floor": (float, 1e-6),
        "measure_D_prime": (_opt_int, None),
    },
    "stage": {
        "D": (int, ...),
        "tau": (float, ...),
        "max_steps": (int, ...),
        "energy_tol": (float, 1e-6),
        "D_prime": (_opt_int, None),
        "method": (_choice(*METHODS), "fu"),
        "delta": (int, 0),
        "B_Z": (float, 0.0),
        "ramp_factor": (float, 0.9),
        "ramp_every": (int, 10),
        "measure_every": (int, 1),
        "full_tensor": (_bool, False),
        "gauge": (_choice("global", "local", "none"), "global"),
    },
    "cluster_study": {
        "checkpoint": (_STR, ""),
        "deltas": (_INTS, None),
        "xs": (_INTS, None),
        "fit_mode": (_choice("lsq", "two_point"), "lsq"),
        "delta_pair": (_INTS, [2, 4]),
        "x_pair": (_INTS, [4, 8]),
        "D_prime": (_opt_int, None),
        "ratio_low": (float, 0.5),
        "ratio_high": (float, 2.0),
        "r2_min": (float, 0.95),
    },
    "gauge_study": {
        "models": (_list(_model_tag), [("ising", 1.0), ("ising", 3.0), ("heisenberg", 0.0)]),
        "L": (int, 6),
        "D": (int, 2),
        "su_steps": (int, 30),
        "su_tau": (float, 0.05),
        "tau": (float, 0.01),
        "steps": (int, 1),
        "update": (_choice("reduced", "full_tensor", "both"), "both"),
        "horizon": (int, 10),
    },
    "purification_study": {
        "checkpoint": (_STR, ""),
        "L": (int, 6),
        "B": (float, 2.5),
        "D": (int, 2),
        "su_steps": (int, 40),
        "su_tau": (float, 0.05),
        "D2s": (_INTS, [1, 2, 3]),
        "dps": (_INTS, [1, 2, 3]),
        "solver": (_choice(*SOLVERS), "newton"),
        "sweeps_max": (int, 12),
    },
    "energy_table": {
        "kind": (_choice(*KINDS), "ising"),
        "cells": (_list(_cell), ...),
        "taus": (_FLOATS, [0.05, 0.01]),
        "max_steps": (int, 100),
        "method": (_choice(*METHODS), "su"),
        "energy_tol": (float, 1e-6),
    },
    "scaling_probe": {
        "Ds": (_INTS, [2, 3, 4, 5]),
        "L": (int, 8),
        "repeats": (int, 3),
        "row": (int, 3),
        "band_low": (float, 8.0),
        "band_high": (float, 11.0),
    },
}

_STAGE_RE = re.compile(r"^stage\.(\d+)$")


@dataclass
class RunConfig:
    """Parsed configuration: ``sections`` maps name to a dict of typed values."""

    sections: dict = field(default_factory=dict)
    stages: list = field(default_factory=list)
    source: str = ""

    def section(self, name: str) -> dict:
        """Values of ``name`` with defaults filled in (empty dict if absent and optional)."""
        if name in self.sections:
            return self.sections[name]
        return _fill(name, {}, required=False)

    @property
    def seed(self) -> int:
        return self.section("run")["seed"]

    def model(self) -> ModelSpec:
        m = self.sections.get("model")
        if m is None:
            raise ConfigError("[model] section is required for this command")
        return ModelSpec(m["kind"], J=m["J"], B=m["B"])

    def schedule(self) -> Schedule:
        if not self.stages:
            raise ConfigError("at least one [stage.N] section is required")
        sc = self.section("schedule")
        try:
            return Schedule(
                [Stage(**s) for s in self.stages],
                noise=sc["noise"],
                seed=self.seed,
                window=sc["window"],
                B_Z_floor=sc["B_Z_floor"],
                measure_D_prime=sc["measure_D_prime"],
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def canonical(self) -> str:
        """Deterministic text form of every resolved value, used for hashing."""
        lines = []
        for name in sorted(self.sections):
            lines.append(f"[{name}]")
            lines += [f"{k}={self.sections[name][k]!r}" for k in sorted(self.sections[name])]
        for i, s in enumerate(self.stages):
            lines.append(f"[stage.{i}]")
            lines += [f"{k}={s[k]!r}" for k in sorted(s)]
        return "\n".join(lines)

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:12]

    def with_overrides(self, seed: int | None = None, out: str | None = None, threads: int | None = None):
        run = dict(self.section("run"))
        if seed is not None:
            run["seed"] = seed
        if out is not None:
            run["out"] = out
        if threads is not None:
            if threads < 1:
                raise ConfigError("--threads must be >= 1")
            run["threads"] = threads
        return RunConfig({**self.sections, "run": run}, list(self.stages), self.source)


def _fill(name: str, raw: dict, required: bool = True) -> dict:
    schema = SCHEMA[name]
    out = {}
    for key, (conv, default) in schema.items():
        if key in raw:
            try:
                out[key] = conv(raw[key])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"[{name}] {key}: {exc}") from exc
        elif default is ...:
            if required:
                raise ConfigError(f"[{name}] missing required key {key!r}")
            out[key] = None
        else:
            out[key] = default
    return out


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keep key case: D and D_prime are distinct
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    sections: dict = {}
    stages: dict[int, dict] = {}
    for name in cp.sections():
        raw = dict(cp[name])
        m = _STAGE_RE.match(name)
        kind = "stage" if m else name
        if kind not in SCHEMA:
            raise ConfigError(f"{source}: unknown section [{name}]")
        unknown = sorted(set(raw) - set(SCHEMA[kind]))
        if unknown:
            raise ConfigError(f"{source}: unknown key(s) in [{name}]: {', '.join(unknown)}")
        values = _fill(kind, raw)
        if m:
            stages[int(m.group(1))] = values
        else:
            sections[name] = values
    cfg = RunConfig(sections, [stages[i] for i in sorted(stages)], source)
    _check(cfg)
    return cfg


def _check(cfg: RunConfig) -> None:
    for s in cfg.stages:
        if s["D"] < 1 or s["tau"] <= 0 or s["max_steps"] < 1:
            raise ConfigError("stage needs D >= 1, tau > 0 and max_steps >= 1")
    if "model" in cfg.sections and cfg.sections["model"]["L"] < 1:
        raise ConfigError("[model] L must be >= 1")
    if cfg.section("run")["threads"] < 1:
        raise ConfigError("[run] threads must be >= 1")
    if cfg.stages:
        cfg.schedule()
    sp = cfg.section("scaling_probe")
    if sp["band_low"] > sp["band_high"]:
        raise ConfigError("[scaling_probe] band_low exceeds band_high")


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, str(path))
