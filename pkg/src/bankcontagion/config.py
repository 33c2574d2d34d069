"""Scenario configuration files.

A scenario file is INI-style text with the sections ``[model]``,
``[initial]``, ``[simulate]``, ``[optimize]``, ``[calibrate]`` and
``[sweep]``.  Every key is checked; unknown sections or keys are errors.
See ``docs/config.md`` for the full grammar.
"""

from __future__ import annotations

import configparser
import math
import re
import warnings
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .calibration import AT_LEAST, AT_MOST, CONTAGION_FREE, DEFAULT_BOX, EQUALS, OBSERVABLES, CalibrationTargets, Target
from .integrator import DEFAULT_STEP, DEFAULT_THRESHOLD
from .model import DomainError, InitialConditions, Parameters
from .ocp import DIRECT, FBSM, OcpSpec

SOLVERS = (FBSM, DIRECT, "both")

_KEYS = {
    "model": {"name", "population", "beta", "gamma"},
    "initial": {"s0", "i0", "r0"},
    "simulate": {"horizon", "steps", "threshold"},
    "optimize": {
        "enabled",
        "horizon",
        "weight",
        "cells",
        "solver",
        "lower",
        "upper",
        "relaxation",
        "fbsm_tol",
        "fbsm_max_iter",
        "direct_tol",
        "direct_max_iter",
    },
    "calibrate": {"targets", "beta_range", "gamma_range", "horizon", "threshold", "accept"},
    "sweep": {"weights", "solver", "horizon"},
}

_TARGET = re.compile(
    r"^(?P<obs>[a-z_]+)\s*(?:\(\s*(?P<day>[^)]+?)\s*\))?\s*(?P<op><=|>=|=)\s*(?P<value>\S+)$"
)
_OPS = {"=": EQUALS, "<=": AT_MOST, ">=": AT_LEAST}

BUILTIN = ("portugal", "spain", "uk")


@dataclass(frozen=True)
class Issue:
    field: str
    message: str
    line: int | None = None

    def __str__(self):
        where = f" (line {self.line})" if self.line else ""
        return f"{self.field}{where}: {self.message}"


class ConfigError(ValueError):
    """Invalid scenario file; ``issues`` lists every problem found."""

    def __init__(self, path, issues: list[Issue]):
        self.path = path
        self.issues = list(issues)
        body = "\n".join(f"  {i}" for i in self.issues)
        super().__init__(f"invalid scenario config {path}:\n{body}")


@dataclass(frozen=True)
class SimulateBlock:
    horizon: float = 100.0
    steps: int | None = None
    threshold: float = DEFAULT_THRESHOLD


@dataclass(frozen=True)
class OptimizeBlock:
    enabled: bool = True
    horizon: float = 30.0
    weight: float = 1.5
    cells: int = 300
    solver: str = "both"
    lower: float = 0.0
    upper: float = 1.0
    relaxation: float = 0.5
    fbsm_tol: float = 1e-6
    fbsm_max_iter: int = 500
    direct_tol: float = 1e-6
    direct_max_iter: int = 5000


@dataclass(frozen=True)
class SweepBlock:
    weights: tuple[float, ...]
    solver: str = DIRECT
    horizon: float | None = None


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    population: float
    ic: InitialConditions
    params: Parameters | None = None
    targets: CalibrationTargets | None = None
    box: tuple[tuple[float, float], tuple[float, float]] = DEFAULT_BOX
    accept: float = 1e-3
    simulate: SimulateBlock = field(default_factory=SimulateBlock)
    optimize: OptimizeBlock | None = None
    sweep: SweepBlock | None = None
    path: Path | None = None

    def ocp_spec(self, params: Parameters, horizon: float | None = None, weight: float | None = None) -> OcpSpec:
        o = self.optimize or OptimizeBlock()
        return OcpSpec(
            params=params,
            ic=self.ic,
            horizon=horizon or o.horizon,
            weight=weight or o.weight,
            lower=o.lower,
            upper=o.upper,
            cells=o.cells,
            step=DEFAULT_STEP,
            relaxation=o.relaxation,
            fbsm_tol=o.fbsm_tol,
            fbsm_max_iter=o.fbsm_max_iter,
            direct_tol=o.direct_tol,
            direct_max_iter=o.direct_max_iter,
        )


def _line_index(text: str) -> dict[tuple[str, str | None], int]:
    """(section, key) -> line number, (section, None) -> header line."""
    index = {}
    section = None
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        m = re.match(r"^\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip().lower()
            index.setdefault((section, None), number)
            continue
        if raw[:1].isspace():
            continue
        key = re.split(r"[=:]", line, maxsplit=1)[0].strip().lower()
        index.setdefault((section, key), number)
    return index


class _Reader:
    def __init__(self, parser, lines):
        self.parser = parser
        self.lines = lines
        self.issues: list[Issue] = []

    def issue(self, section, key, message):
        line = self.lines.get((section, key)) or self.lines.get((section, None))
        path = f"[{section}]" + (f".{key}" if key else "")
        self.issues.append(Issue(path, message, line))

    def has(self, section, key=None):
        if not self.parser.has_section(section):
            return False
        return key is None or self.parser.has_option(section, key)

    def raw(self, section, key):
        return self.parser.get(section, key).strip()

    def number(self, section, key, default=None, kind=float, check=None, rule=""):
        if not self.has(section, key):
            return default
        text = self.raw(section, key)
        try:
            value = kind(text)
        except ValueError:
            self.issue(section, key, f"expected {'an integer' if kind is int else 'a number'}, got {text!r}")
            return default
        if kind is float and not math.isfinite(value):
            self.issue(section, key, f"value must be finite, got {text!r}")
            return default
        if check is not None and not check(value):
            self.issue(section, key, rule or f"invalid value {text!r}")
            return default
        return value

    def flag(self, section, key, default):
        if not self.has(section, key):
            return default
        try:
            return self.parser.getboolean(section, key)
        except ValueError:
            self.issue(section, key, f"expected true/false, got {self.raw(section, key)!r}")
            return default

    def choice(self, section, key, options, default):
        if not self.has(section, key):
            return default
        value = self.raw(section, key).lower()
        if value not in options:
            self.issue(section, key, f"expected one of {', '.join(options)}, got {value!r}")
            return default
        return value

    def pair(self, section, key, default):
        if not self.has(section, key):
            return default
        parts = self.raw(section, key).replace(",", " ").split()
        try:
            lo, hi = (float(v) for v in parts)
        except ValueError:
            self.issue(section, key, "expected two numbers 'low high'")
            return default
        if not (0 < lo < hi and math.isfinite(hi)):
            self.issue(section, key, "range must satisfy 0 < low < high < inf")
            return default
        return (lo, hi)


def parse_target(text: str) -> Target:
    """Parse one target line, e.g. ``infected(30) = 64`` or ``contagion_free_time <= 365``."""
    m = _TARGET.match(text.strip())
    if not m:
        raise DomainError(f"cannot parse target {text!r}; expected 'observable(day) = value'")
    obs = m.group("obs")
    if obs not in OBSERVABLES:
        raise DomainError(f"unknown observable {obs!r}; expected one of {', '.join(OBSERVABLES)}")
    try:
        value = float(m.group("value"))
        day = float(m.group("day")) if m.group("day") is not None else None
    except ValueError:
        raise DomainError(f"non-numeric value in target {text!r}") from None
    if obs == CONTAGION_FREE and day is not None:
        raise DomainError("contagion_free_time takes no day")
    return Target(obs, value, _OPS[m.group("op")], day)


def builtin_path(name: str) -> Path:
    return Path(str(resources.files("bankcontagion") / "configs" / f"{name}.cfg"))


def resolve_path(spec: str | Path) -> Path:
    """Path on disk, or the name of a bundled scenario (``portugal``, ``spain``, ``uk``)."""
    path = Path(spec)
    if path.exists() or str(spec) not in BUILTIN:
        return path
    return builtin_path(str(spec))


def load_config(path) -> ScenarioConfig:
    """Read and validate a scenario file; raises :class:`ConfigError` listing all problems."""
    path = resolve_path(path)
    text = path.read_text()
    return parse_config(text, path)


def parse_config(text: str, path=None) -> ScenarioConfig:
    path = Path(path) if path is not None else None
    label = path or "<string>"
    parser = configparser.ConfigParser(
        interpolation=None, inline_comment_prefixes=("#", ";"), empty_lines_in_values=False
    )
    try:
        parser.read_string(text, source=str(label))
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise ConfigError(label, [Issue("<file>", str(exc).splitlines()[0], line)]) from None
    r = _Reader(parser, _line_index(text))

    for section in parser.sections():
        if section not in _KEYS:
            r.issue(section, None, f"unknown section; expected one of {', '.join(_KEYS)}")
            continue
        for key in parser.options(section):
            if key not in _KEYS[section]:
                r.issue(section, key, "unknown key")

    positive = dict(check=lambda v: v > 0, rule="must be positive")

    name = parser.get("model", "name", fallback=None) if r.has("model") else None
    name = (name or "").strip() or (path.stem if path else "scenario")
    population = r.number("model", "population", 169.0, **positive)

    explicit = r.has("model", "beta") or r.has("model", "gamma")
    calibrated = r.has("calibrate")
    params = targets = None
    if explicit and calibrated:
        r.issue("calibrate", None, "give either explicit beta/gamma in [model] or a [calibrate] section, not both")
    elif not explicit and not calibrated:
        r.issue("model", None, "no parameters: set beta and gamma, or add a [calibrate] section")
    elif explicit:
        if not (r.has("model", "beta") and r.has("model", "gamma")):
            r.issue("model", "beta" if not r.has("model", "beta") else "gamma", "beta and gamma must be given together")
        else:
            nonneg = dict(check=lambda v: v >= 0, rule="must be non-negative")
            beta = r.number("model", "beta", None, **nonneg)
            gamma = r.number("model", "gamma", None, **nonneg)
            if beta is not None and gamma is not None and population is not None:
                params = Parameters(beta, gamma, population)

    s0 = r.number("initial", "s0", None)
    i0 = r.number("initial", "i0", None)
    r0 = r.number("initial", "r0", None)
    ic = None
    if population is not None:
        s0 = population - 1.0 if s0 is None and not r.has("initial", "s0") else s0
        i0 = 1.0 if i0 is None and not r.has("initial", "i0") else i0
        r0 = 0.0 if r0 is None and not r.has("initial", "r0") else r0
        if None not in (s0, i0, r0):
            if i0 <= 0:
                r.issue("initial", "i0", "I(0) > 0 is required (initially infected banks)")
            if r0 != 0:
                r.issue("initial", "r0", "R(0) = 0 is required")
            if s0 < 0:
                r.issue("initial", "s0", "must be non-negative")
            if i0 > 0 and r0 == 0 and s0 >= 0:
                if abs(s0 + i0 + r0 - population) > 1e-9 * population:
                    r.issue("initial", None, f"s0 + i0 + r0 = {s0 + i0 + r0:g} must equal population {population:g}")
                else:
                    with warnings.catch_warnings():
                        warnings.simplefilter("default")
                        ic = InitialConditions(s0, i0, r0)

    sim_horizon = r.number("simulate", "horizon", 100.0, **positive)
    steps = r.number("simulate", "steps", None, kind=int, check=lambda v: v >= 1, rule="must be >= 1")
    threshold = r.number("simulate", "threshold", DEFAULT_THRESHOLD, **positive)
    simulate = SimulateBlock(sim_horizon or 100.0, steps, threshold or DEFAULT_THRESHOLD)

    box = DEFAULT_BOX
    accept = 1e-3
    if calibrated and not explicit:
        if not r.has("calibrate", "targets"):
            r.issue("calibrate", "targets", "missing; list one target per line")
        else:
            parsed = []
            for line in r.raw("calibrate", "targets").splitlines():
                if not line.strip():
                    continue
                try:
                    parsed.append(parse_target(line))
                except DomainError as exc:
                    r.issue("calibrate", "targets", str(exc))
            cal_horizon = r.number("calibrate", "horizon", None, **positive)
            cal_threshold = r.number("calibrate", "threshold", threshold or DEFAULT_THRESHOLD, **positive)
            if parsed:
                try:
                    targets = CalibrationTargets(tuple(parsed), cal_horizon, cal_threshold)
                except DomainError as exc:
                    r.issue("calibrate", "targets", str(exc))
        box = (r.pair("calibrate", "beta_range", DEFAULT_BOX[0]), r.pair("calibrate", "gamma_range", DEFAULT_BOX[1]))
        accept = r.number("calibrate", "accept", 1e-3, **positive)

    optimize = None
    if r.has("optimize"):
        d = OptimizeBlock()
        fraction = dict(check=lambda v: 0 <= v <= 1, rule="must lie in [0, 1]")
        optimize = OptimizeBlock(
            enabled=r.flag("optimize", "enabled", True),
            horizon=r.number("optimize", "horizon", d.horizon, **positive),
            weight=r.number("optimize", "weight", d.weight, **positive),
            cells=r.number("optimize", "cells", d.cells, kind=int, check=lambda v: v >= 1, rule="must be >= 1"),
            solver=r.choice("optimize", "solver", SOLVERS, d.solver),
            lower=r.number("optimize", "lower", d.lower, **fraction),
            upper=r.number("optimize", "upper", d.upper, **fraction),
            relaxation=r.number("optimize", "relaxation", d.relaxation, check=lambda v: 0 < v <= 1, rule="must lie in (0, 1]"),
            fbsm_tol=r.number("optimize", "fbsm_tol", d.fbsm_tol, **positive),
            fbsm_max_iter=r.number("optimize", "fbsm_max_iter", d.fbsm_max_iter, kind=int, **positive),
            direct_tol=r.number("optimize", "direct_tol", d.direct_tol, **positive),
            direct_max_iter=r.number("optimize", "direct_max_iter", d.direct_max_iter, kind=int, **positive),
        )
        if optimize.lower >= optimize.upper:
            r.issue("optimize", "upper", "control bounds need lower < upper")

    sweep = None
    if r.has("sweep"):
        weights = ()
        if not r.has("sweep", "weights"):
            r.issue("sweep", "weights", "missing; list the cost weights b")
        else:
            try:
                weights = tuple(float(v) for v in r.raw("sweep", "weights").replace(",", " ").split())
            except ValueError:
                r.issue("sweep", "weights", "expected numbers separated by spaces or commas")
            else:
                if not weights:
                    r.issue("sweep", "weights", "empty list")
                elif any(not (w > 0 and math.isfinite(w)) for w in weights):
                    r.issue("sweep", "weights", "cost weights must be positive")
        sweep = SweepBlock(
            weights,
            r.choice("sweep", "solver", (FBSM, DIRECT), DIRECT),
            r.number("sweep", "horizon", None, **positive),
        )

    if r.issues:
        raise ConfigError(label, r.issues)
    return ScenarioConfig(
        name=name,
        population=population,
        ic=ic,
        params=params,
        targets=targets,
        box=box,
        accept=accept,
        simulate=simulate,
        optimize=optimize,
        sweep=sweep,
        path=path,
    )


def resolve_params(cfg: ScenarioConfig, step: float = DEFAULT_STEP):
    """(Parameters, FitReport or None): explicit values, or a fit to the targets."""
    from .calibration import calibrate

    if cfg.params is not None:
        return cfg.params, None
    fit = calibrate(cfg.targets, box=cfg.box, population=cfg.population, ic=cfg.ic, step=step, accept=cfg.accept)
    return fit.params, fit
