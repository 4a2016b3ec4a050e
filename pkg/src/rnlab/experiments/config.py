"""Scenario configuration: sectioned ``key = value`` files.

A config is a flat INI file (``configparser``) with the sections below.
Unknown sections are rejected; unknown keys inside ``[options]`` and
``[tolerances]`` are passed through to the scenario.

    [scenario]   name, seed, out, threads
    [drift]      name plus catalog parameters (``base`` for shifted drifts)
    [initial]    name plus initial-datum parameters
    [grid]       L, T, dt, dx
    [sweep]      epsilons (comma separated), n_paths
    [tolerances] scenario thresholds
    [options]    scenario knobs

``to_ini`` writes the canonical form (sorted keys, floats at 17 significant
digits), which is what reports embed for replay.
"""
from __future__ import annotations

import configparser
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

from rnlab.brownian import fmt
from rnlab.drift import CATALOG, catalog
from rnlab.errors import ConfigError
from rnlab.spde import initial_datum

SECTIONS = ("scenario", "drift", "initial", "grid", "sweep", "tolerances", "options")
SCENARIOS = ("simulate", "lemma-sweep", "commutator", "selection", "stability", "negative-example",
             "hypothesis-check")
INITIAL_DATA = ("zero", "gaussian", "box", "bump")
_STRING_PARAMS = {"base"}


def _number(text: str, key: str):
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {text!r}") from None


def _params(section) -> dict:
    return {k: (v if k in _STRING_PARAMS else _number(v, k)) for k, v in section.items() if k != "name"}


def parse_list(text: str, key: str = "list") -> tuple[float, ...]:
    items = [s.strip() for s in str(text).split(",") if s.strip()]
    return tuple(_number(s, key) for s in items)


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str
    drift: str = "zero"
    drift_params: dict = field(default_factory=dict)
    initial: str = "gaussian"
    initial_params: dict = field(default_factory=dict)
    L: float = 4.0
    T: float = 1.0
    dt: float = 1e-3
    dx: float = 1e-2
    epsilons: tuple = ()
    n_paths: int = 1
    seed: int = 0
    tolerances: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)
    out: str = "out"
    threads: int = 1

    # ------------------------------------------------------------ access

    def tol(self, key: str, default: float) -> float:
        return _number(self.tolerances[key], key) if key in self.tolerances else default

    def opt(self, key: str, default=None):
        return self.options.get(key, default)

    def opt_float(self, key: str, default: float) -> float:
        return _number(self.options[key], key) if key in self.options else default

    def opt_int(self, key: str, default: int) -> int:
        if key not in self.options:
            return default
        v = _number(self.options[key], key)
        if v != int(v):
            raise ConfigError(f"{key}: expected an integer, got {self.options[key]!r}")
        return int(v)

    def opt_list(self, key: str, default: tuple) -> tuple:
        return parse_list(self.options[key], key) if key in self.options else tuple(default)

    def build_drift(self):
        return catalog(self.drift, **self.drift_params)

    def build_initial(self):
        return initial_datum(self.initial, **self.initial_params)

    @property
    def n_steps(self) -> int:
        return round(self.T / self.dt)

    # ------------------------------------------------------------ checks

    def validate(self, mollify_eps: float | None = None) -> "ExperimentConfig":
        """Refuse inconsistent configs instead of clamping.

        ``mollify_eps`` is the smallest scale at which a rough drift is
        mollified for time stepping (default: the smallest eps of the
        sweep); it is what bounds dt.
        """
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; expected one of {', '.join(SCENARIOS)}")
        if self.drift not in CATALOG:
            raise ConfigError(f"unknown drift {self.drift!r}")
        if self.initial not in INITIAL_DATA:
            raise ConfigError(f"unknown initial datum {self.initial!r}")
        for name, v in (("L", self.L), ("T", self.T), ("dt", self.dt), ("dx", self.dx)):
            if not (math.isfinite(v) and v > 0):
                raise ConfigError(f"{name} must be positive, got {v}")
        if abs(self.n_steps * self.dt - self.T) > 1e-9 * self.T:
            raise ConfigError(f"dt={self.dt} does not divide T={self.T}")
        n_x = round(2 * self.L / self.dx)
        if abs(n_x * self.dx - 2 * self.L) > 1e-9 * self.L:
            raise ConfigError(f"dx={self.dx} does not divide [-L, L] with L={self.L}")
        if self.n_paths < 1:
            raise ConfigError("n_paths must be at least 1")
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")
        if any(not (e > 0) for e in self.epsilons):
            raise ConfigError("epsilons must be positive")
        try:
            drift = self.build_drift()
            self.build_initial()
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad drift or initial parameters: {exc}") from None
        if self.epsilons:
            eps_min = min(self.epsilons)
            if self.dx > eps_min / 8 * (1 + 1e-12):
                raise ConfigError(f"dx={self.dx} exceeds min(eps)/8 = {eps_min / 8}")
            scale = eps_min if mollify_eps is None else mollify_eps
            if drift.deriv is None and self.dt > scale * scale / 4 * (1 + 1e-12):
                raise ConfigError(f"dt={self.dt} exceeds eps^2/4 = {scale * scale / 4} for a mollified rough drift")
        elif drift.deriv is None and self.scenario not in ("hypothesis-check",):
            raise ConfigError(f"drift {self.drift!r} is rough and needs an eps list to be mollified")
        return self

    # ------------------------------------------------------------ io

    def with_overrides(self, seed=None, out=None, threads=None) -> "ExperimentConfig":
        kw = {}
        if seed is not None:
            kw["seed"] = int(seed)
        if out is not None:
            kw["out"] = str(out)
        if threads is not None:
            kw["threads"] = int(threads)
        return replace(self, **kw)

    def to_ini(self) -> str:
        """Canonical text; ``threads`` and ``out`` are left out so replays compare equal."""
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        cp["scenario"] = {"name": self.scenario, "seed": str(self.seed)}
        cp["drift"] = {"name": self.drift, **{k: _text(v) for k, v in sorted(self.drift_params.items())}}
        cp["initial"] = {"name": self.initial, **{k: _text(v) for k, v in sorted(self.initial_params.items())}}
        cp["grid"] = {"L": fmt(self.L), "T": fmt(self.T), "dt": fmt(self.dt), "dx": fmt(self.dx)}
        cp["sweep"] = {"epsilons": ", ".join(fmt(e) for e in self.epsilons), "n_paths": str(self.n_paths)}
        cp["tolerances"] = {k: str(v) for k, v in sorted(self.tolerances.items())}
        cp["options"] = {k: str(v) for k, v in sorted(self.options.items())}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


def _text(v) -> str:
    return v if isinstance(v, str) else fmt(v)


def parse_config(text: str, scenario: str | None = None) -> ExperimentConfig:
    """Build a config from INI text; ``scenario`` overrides ``[scenario] name``."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unreadable config: {exc}") from None
    extra = set(cp.sections()) - set(SECTIONS)
    if extra:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(extra))}")
    sec = {s: (cp[s] if cp.has_section(s) else {}) for s in SECTIONS}

    def get(section, key, default):
        return sec[section].get(key, default)

    name = scenario or get("scenario", "name", None)
    if not name:
        raise ConfigError("no scenario named")
    try:
        n_paths = int(get("sweep", "n_paths", "1"))
        seed = int(get("scenario", "seed", "0"))
        threads = int(get("scenario", "threads", "1"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if seed < 0:
        raise ConfigError("seed must be non-negative")
    return ExperimentConfig(
        scenario=name,
        drift=get("drift", "name", "zero"),
        drift_params=_params(sec["drift"]),
        initial=get("initial", "name", "gaussian"),
        initial_params=_params(sec["initial"]),
        L=_number(get("grid", "L", "4"), "L"),
        T=_number(get("grid", "T", "1"), "T"),
        dt=_number(get("grid", "dt", "1e-3"), "dt"),
        dx=_number(get("grid", "dx", "1e-2"), "dx"),
        epsilons=parse_list(get("sweep", "epsilons", ""), "epsilons"),
        n_paths=n_paths,
        seed=seed,
        tolerances=dict(sec["tolerances"]),
        options=dict(sec["options"]),
        out=get("scenario", "out", "out"),
        threads=threads,
    )


def load_config(path: str | Path, scenario: str | None = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, scenario)
