"""Recover (beta, gamma) from scenario observables.

Targets are point observations of the uncontrolled model (infected,
susceptible or recovered count on a given day) or the day the contagion dies
out.  Each target contributes a relative discrepancy ``(value - model) /
max(|value|, 1)``; bound targets (``at_most`` / ``at_least``) contribute only
when violated.  The fit minimises the sum of squares with Nelder-Mead in
log-parameter space, started from the best points of a 4x4 log grid.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from . import kernels
from .integrator import DEFAULT_STEP, DEFAULT_THRESHOLD, IntegrationError, TimeGrid, Trajectory, time_to_contagion_free
from .model import DomainError, InitialConditions, Parameters

log = logging.getLogger(__name__)

INFECTED = "infected"
SUSCEPTIBLE = "susceptible"
RECOVERED = "recovered"
CONTAGION_FREE = "contagion_free_time"
OBSERVABLES = (INFECTED, SUSCEPTIBLE, RECOVERED, CONTAGION_FREE)
_COLUMN = {SUSCEPTIBLE: 0, INFECTED: 1, RECOVERED: 2}

EQUALS = "equals"
AT_MOST = "at_most"
AT_LEAST = "at_least"
COMPARATORS = (EQUALS, AT_MOST, AT_LEAST)

DEFAULT_BOX = ((1e-5, 0.1), (1e-4, 1.0))
#: fits with a residual norm above this are reported as failures
ACCEPT_NORM = 1e-3
#: squared residual norm treated as an exact fit
EXACT_FIT = 1e-24
GRID_POINTS = 4
#: Nelder-Mead runs (best grid seeds first); all 16 cells by default so that
#: distinct parameter pairs matching the same targets are found
STARTS = GRID_POINTS * GRID_POINTS
#: log-space distance under which two end points count as the same root
SAME_ROOT = 1e-3
#: a run is cut short once it is this close (log space) to a known root with
#: objective below CAPTURE_F; it would only polish the same root again
CAPTURE = 0.05
CAPTURE_F = 1e-2
#: end points worse than this are not worth a restart
RESTART_F = 1.0
#: iterations without any decrease of the objective before a run is abandoned
STALL = 60


@dataclass(frozen=True)
class Target:
    observable: str
    value: float
    comparator: str = EQUALS
    day: float | None = None

    def __post_init__(self):
        if self.observable not in OBSERVABLES:
            raise DomainError(f"unknown observable {self.observable!r}")
        if self.comparator not in COMPARATORS:
            raise DomainError(f"unknown comparator {self.comparator!r}")
        if not math.isfinite(self.value):
            raise DomainError("target value must be finite")
        if self.observable == CONTAGION_FREE:
            if self.day is not None:
                raise DomainError("contagion_free_time takes no day")
            if self.value <= 0:
                raise DomainError("contagion-free time must be positive")
        elif self.day is None or not self.day > 0:
            raise DomainError(f"{self.observable} target needs a positive day")

    @property
    def scale(self) -> float:
        return max(abs(self.value), 1.0)

    @property
    def extent(self) -> float:
        """Last day the simulation has to cover for this target."""
        return self.day if self.day is not None else self.value

    def __str__(self):
        op = {EQUALS: "=", AT_MOST: "<=", AT_LEAST: ">="}[self.comparator]
        day = f"({self.day:g})" if self.day is not None else ""
        return f"{self.observable}{day} {op} {self.value:g}"


@dataclass(frozen=True)
class CalibrationTargets:
    targets: tuple[Target, ...]
    horizon: float | None = None
    threshold: float = DEFAULT_THRESHOLD

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))
        if not self.targets:
            raise DomainError("no calibration targets")
        if self.horizon is not None:
            for t in self.targets:
                if t.day is not None and t.day > self.horizon:
                    raise DomainError(f"target {t} lies beyond the declared horizon {self.horizon:g}")

    @property
    def equalities(self) -> int:
        return sum(t.comparator == EQUALS for t in self.targets)

    @property
    def determined(self) -> bool:
        """Two equality targets are needed to pin two parameters."""
        return self.equalities >= 2

    @property
    def simulation_horizon(self) -> float:
        need = max(t.extent for t in self.targets)
        if any(t.observable == CONTAGION_FREE for t in self.targets):
            need *= 1.25
        return max(need, self.horizon or 0.0)


class Observation:
    """Model values needed by a target set, from one streaming integration."""

    def __init__(self, p: Parameters, ic: InitialConditions, targets: "CalibrationTargets", step: float = DEFAULT_STEP):
        # whole steps of exactly ``step``, so the mesh matches a plain simulation
        steps = math.ceil(targets.simulation_horizon / step - 1e-9)
        grid = TimeGrid(0.0, steps * step, steps)
        self.grid = grid
        self.threshold = targets.threshold
        days = sorted({t.day for t in targets.targets if t.day is not None})
        nodes = sorted({n for d in days for n in _bracket(d, grid)})
        self._nodes = {n: k for k, n in enumerate(nodes)}
        recorded = np.zeros((len(nodes), 3))
        x0 = np.array([ic.s0, ic.i0, ic.r0])
        tail = np.zeros(2)
        fail, free, last = kernels.sir_observe(
            p.beta, p.gamma, x0, grid.h, grid.steps, np.array(nodes, dtype=np.int64), targets.threshold, recorded, tail
        )
        if fail >= 0:
            raise IntegrationError(int(fail))
        self._recorded = recorded
        self.free_node = int(free)
        self.last_node = int(last)
        self.final_infected = (float(tail[0]), float(tail[1]))

    def at(self, day: float, column: int) -> float:
        lo, hi = _bracket(day, self.grid)
        a = self._recorded[self._nodes[lo], column]
        if hi == lo:
            return float(a)
        b = self._recorded[self._nodes[hi], column]
        w = (day - self.grid.t_start) / self.grid.h - lo
        return float(a + w * (b - a))

    def contagion_free_time(self) -> float:
        if self.free_node >= 0:
            return self.grid.t_start + self.free_node * self.grid.h
        # not reached on the mesh: extrapolate the terminal decay rate so the
        # residual keeps pointing the search in the right direction
        before, last = self.final_infected
        t_end = self.grid.t_end
        rate = math.log(before / last) / self.grid.h if last > 0 and before > 0 else 0.0
        if rate > 0 and last > self.threshold:
            return t_end + min(math.log(last / self.threshold) / rate, 10.0 * t_end)
        return 11.0 * t_end

    def value(self, target: Target) -> float:
        if target.observable == CONTAGION_FREE:
            return self.contagion_free_time()
        return self.at(target.day, _COLUMN[target.observable])


def _bracket(day: float, grid: TimeGrid) -> tuple[int, int]:
    x = (day - grid.t_start) / grid.h
    k = int(round(x))
    if abs(x - k) < 1e-9:
        return k, k
    lo = min(int(math.floor(x)), grid.steps - 1)
    return lo, lo + 1


def observe(traj: Trajectory, target: Target, threshold: float = DEFAULT_THRESHOLD) -> float:
    """Value of ``target``'s observable on a stored trajectory."""
    if target.observable == CONTAGION_FREE:
        t = time_to_contagion_free(traj, threshold)
        return math.inf if t is None else t
    column = traj.sir()[:, _COLUMN[target.observable]]
    return float(np.interp(target.day, traj.times, column))


def residual(
    p: Parameters,
    targets: CalibrationTargets,
    ic: InitialConditions | None = None,
    step: float = DEFAULT_STEP,
) -> np.ndarray:
    """Per-target relative discrepancies (target minus model) of the uncontrolled model."""
    if p.degenerate:
        raise DomainError("beta = gamma = 0 is a degenerate model")
    ic = ic or InitialConditions.canonical(p.population)
    obs = Observation(p, ic, targets, step)
    out = np.empty(len(targets.targets))
    for k, t in enumerate(targets.targets):
        d = (t.value - obs.value(t)) / t.scale
        # bounds only count when violated: model above an at_most value
        # gives d < 0, model below an at_least value gives d > 0
        if t.comparator == AT_MOST:
            d = min(d, 0.0)
        elif t.comparator == AT_LEAST:
            d = max(d, 0.0)
        out[k] = d
    return out


@dataclass(frozen=True)
class FitReport:
    params: Parameters
    residual_norm: float
    residuals: tuple[float, ...]
    targets: CalibrationTargets
    success: bool
    determined: bool
    evaluations: int
    trace: tuple[tuple[float, float, float], ...] = field(repr=False, default=())
    alternatives: tuple[Parameters, ...] = ()
    message: str = ""

    @property
    def unique(self) -> bool:
        """False when distinct parameter pairs fit the targets equally well."""
        return len(self.alternatives) <= 1

    def describe(self) -> str:
        lines = [
            f"beta = {self.params.beta:.9g}, gamma = {self.params.gamma:.9g}, "
            f"residual norm = {self.residual_norm:.3e} ({'ok' if self.success else 'FAILED'})"
        ]
        for t, r in zip(self.targets.targets, self.residuals):
            lines.append(f"  {str(t):<36s} residual {r:+.3e}")
        if not self.determined:
            lines.append("  note: fewer than two equality targets; the fitted pair is one of many")
        elif not self.unique:
            others = ", ".join(f"({a.beta:.6g}, {a.gamma:.6g})" for a in self.alternatives[1:])
            lines.append(f"  note: targets are also matched by (beta, gamma) = {others}")
        return "\n".join(lines)


def calibrate(
    targets: CalibrationTargets,
    box=DEFAULT_BOX,
    population: float = 169.0,
    ic: InitialConditions | None = None,
    step: float = DEFAULT_STEP,
    accept: float = ACCEPT_NORM,
    starts: int = STARTS,
) -> FitReport:
    """Fit (beta, gamma) inside ``box`` = ((beta_lo, beta_hi), (gamma_lo, gamma_hi)).

    Nelder-Mead runs from the ``starts`` best seeds of the coarse grid.  Every
    distinct end point whose residual norm is within ``accept`` is listed in
    ``alternatives`` (best first), so non-identifiable target sets are visible.
    Deterministic: no random numbers are drawn.  The report is flagged
    unsuccessful when the best residual norm exceeds ``accept``.
    """
    (b_lo, b_hi), (g_lo, g_hi) = box
    for v in (b_lo, b_hi, g_lo, g_hi):
        if not (math.isfinite(v) and v > 0):
            raise DomainError("search box must be positive and finite")
    if not (b_lo < b_hi and g_lo < g_hi):
        raise DomainError("search box bounds are inverted")
    ic = ic or InitialConditions.canonical(population)
    ic.check_population(population)
    bounds = [(math.log(b_lo), math.log(b_hi)), (math.log(g_lo), math.log(g_hi))]
    evaluations = 0

    def objective(z):
        nonlocal evaluations
        evaluations += 1
        z = np.clip(z, [bounds[0][0], bounds[1][0]], [bounds[0][1], bounds[1][1]])
        p = Parameters(math.exp(z[0]), math.exp(z[1]), population)
        try:
            r = residual(p, targets, ic, step)
        except IntegrationError:
            return 1e6
        return float(r @ r)

    # coarse grid seeding: cell centres of a 4x4 partition of the log box
    frac = (np.arange(GRID_POINTS) + 0.5) / GRID_POINTS
    seeds = [
        np.array([bounds[0][0] + a * (bounds[0][1] - bounds[0][0]), bounds[1][0] + c * (bounds[1][1] - bounds[1][0])])
        for a in frac
        for c in frac
    ]
    scored = sorted(((objective(z), k, z) for k, z in enumerate(seeds)), key=lambda e: (e[0], e[1]))
    options = dict(xatol=1e-10, fatol=1e-18, maxiter=1000, maxfev=1500)

    roots = []
    merged = [False]
    history = []

    def stop(intermediate_result):
        f = intermediate_result.fun
        # residual norm 1e-12 is at the integrator's rounding level
        if f <= EXACT_FIT:
            raise StopIteration
        # no progress for a while, typically a simplex pressed against the box
        history.append(f)
        if len(history) > STALL and history[-STALL - 1] - f <= 1e-12 * f:
            raise StopIteration
        # heading into the basin of a root an earlier run already polished
        if f <= CAPTURE_F and any(np.max(np.abs(intermediate_result.x - z)) < CAPTURE for z in roots):
            merged[0] = True
            raise StopIteration

    trace = []
    ends = []
    best = None
    for f0, _, z0 in scored[:starts]:
        merged[0] = False
        history.clear()
        res = minimize(objective, z0, method="Nelder-Mead", bounds=bounds, options=options, callback=stop)
        if EXACT_FIT < res.fun <= RESTART_F and not merged[0]:
            # restart from the end point with a fresh simplex
            history.clear()
            res = minimize(objective, res.x, method="Nelder-Mead", bounds=bounds, options=options, callback=stop)
        trace.append((float(res.x[0]), float(res.x[1]), float(res.fun)))
        if merged[0]:
            continue
        ends.append((float(res.x[0]), float(res.x[1]), float(res.fun)))
        if res.fun <= accept * accept:
            roots.append(np.array(res.x))
        if best is None or res.fun < best.fun:
            best = res
    z = np.clip(best.x, [bounds[0][0], bounds[1][0]], [bounds[0][1], bounds[1][1]])
    params = Parameters(math.exp(z[0]), math.exp(z[1]), population)
    r = residual(params, targets, ic, step)
    norm = float(np.linalg.norm(r))
    alternatives = []
    for b, g, f in sorted(ends, key=lambda e: e[2]):
        if math.sqrt(f) > accept:
            continue
        if all(max(abs(b - math.log(a.beta)), abs(g - math.log(a.gamma))) >= SAME_ROOT for a in alternatives):
            alternatives.append(Parameters(math.exp(b), math.exp(g), population))
    success = norm <= accept
    msg = "fit accepted" if success else f"residual norm {norm:.3e} exceeds {accept:g}"
    log.info("calibration: %s at beta=%.6g gamma=%.6g", msg, params.beta, params.gamma)
    return FitReport(
        params=params,
        residual_norm=norm,
        residuals=tuple(float(v) for v in r),
        targets=targets,
        success=success,
        determined=targets.determined,
        evaluations=evaluations,
        trace=tuple(trace),
        alternatives=tuple(alternatives),
        message=msg,
    )
