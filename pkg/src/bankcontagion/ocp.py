"""Central-Bank intervention problem: minimise I(T) + integral of b*u(t)**2.

Two independent solvers share the same piecewise-constant control mesh:

``solve_fbsm``
    indirect forward-backward sweep on the Pontryagin conditions of the
    (S, I, R) problem, with relaxed control updates;
``solve_direct``
    projected gradient descent on the transcribed (S, R, Y) Mayer
    objective N - S(T) - R(T) + Y(T), gradients from the discrete adjoint of
    the RK4 scheme.

Hamiltonian of the (S, I, R) problem::

    H = b u^2 + lS (-beta S I) + lI (beta S I - gamma I - u I) + lR (gamma I + u I)

Costates satisfy lS' = -dH/dS, lI' = -dH/dI, lR' = -dH/dR = 0.  The terminal
cost is I(T) alone, so lS(T) = 0, lI(T) = 1, lR(T) = 0.  Stationarity in u
gives u* = I (lI - lR) / (2 b), clipped to the control bounds.
"""

from __future__ import annotations

import dataclasses
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import kernels
from .integrator import DEFAULT_STEP, IntegrationError, TimeGrid, Trajectory, sample_controls
from .model import ControlGrid, DomainError, InitialConditions, Parameters

log = logging.getLogger(__name__)

FBSM = "fbsm"
DIRECT = "direct"

#: floor for the adaptive FBSM relaxation
MIN_RELAXATION = 1e-3


@dataclass(frozen=True)
class AdjointState:
    lambda_s: float
    lambda_i: float
    lambda_r: float


#: d I(T) / d(S, I, R)
TERMINAL_ADJOINT = AdjointState(0.0, 1.0, 0.0)


@dataclass(frozen=True)
class OcpSpec:
    params: Parameters
    ic: InitialConditions
    horizon: float
    weight: float = 1.5
    lower: float = 0.0
    upper: float = 1.0
    cells: int = 300
    step: float = DEFAULT_STEP
    # forward-backward sweep
    relaxation: float = 0.5
    fbsm_tol: float = 1e-6
    fbsm_max_iter: int = 500
    # projected gradient
    direct_tol: float = 1e-6
    direct_max_iter: int = 5000
    armijo: float = 1e-4

    def __post_init__(self):
        if not self.horizon > 0:
            raise DomainError(f"horizon must be positive, got {self.horizon}")
        if not self.weight > 0:
            raise DomainError(f"cost weight b must be positive, got {self.weight}")
        if not (0.0 <= self.lower < self.upper <= 1.0):
            raise DomainError(f"control bounds must satisfy 0 <= lower < upper <= 1, got [{self.lower}, {self.upper}]")
        if int(self.cells) != self.cells or self.cells < 1:
            raise DomainError(f"control cells must be a positive integer, got {self.cells}")
        if not 0 < self.relaxation <= 1:
            raise DomainError("relaxation must lie in (0, 1]")
        self.ic.check_population(self.params.population)

    @property
    def grid(self) -> TimeGrid:
        """Integrator mesh: step <= ``step`` and a whole number of steps per cell."""
        return TimeGrid.with_step(self.horizon, self.step, multiple_of=self.cells)

    @property
    def cell_width(self) -> float:
        return self.horizon / self.cells

    def replace(self, **changes) -> "OcpSpec":
        return dataclasses.replace(self, **changes)

    def control(self, values) -> ControlGrid:
        return ControlGrid(0.0, self.horizon, values)

    def constant_control(self, level: float) -> ControlGrid:
        return ControlGrid.constant(0.0, self.horizon, level, self.cells)


class Cost(NamedTuple):
    total: float
    terminal_infected: float
    running: float


@dataclass(frozen=True)
class SolveReport:
    method: str
    spec: OcpSpec
    control: ControlGrid
    trajectory: Trajectory
    adjoint: np.ndarray | None = field(repr=False)
    cost: float
    terminal_infected: float
    running_cost: float
    iterations: int
    converged: bool
    residuals: tuple[float, ...] = field(repr=False, default=())
    message: str = ""

    @property
    def control_integral(self) -> float:
        """Integral of u over [0, T]."""
        return self.control.integral()

    @property
    def weight(self) -> float:
        return self.spec.weight


def _as_values(spec: OcpSpec, u) -> np.ndarray:
    if isinstance(u, ControlGrid):
        if u.cells != spec.cells or u.t_end != spec.horizon or u.t_start != 0.0:
            # evaluate on the problem mesh by resampling cell midpoints
            mids = (np.arange(spec.cells) + 0.5) * spec.cell_width
            return np.array([u(t) for t in mids])
        return np.asarray(u.values, dtype=np.float64)
    values = np.asarray(u, dtype=np.float64).reshape(-1)
    if values.size == 1:
        values = np.full(spec.cells, float(values[0]))
    if values.size != spec.cells:
        raise DomainError(f"expected {spec.cells} control values, got {values.size}")
    if values.min() < spec.lower or values.max() > spec.upper:
        raise DomainError("control outside its bounds")
    return values


def _forward(spec: OcpSpec, values: np.ndarray) -> np.ndarray:
    p, ic, grid = spec.params, spec.ic, spec.grid
    x0 = np.array([ic.s0, ic.i0, ic.r0, 0.0])
    states = kernels.empty_states(grid.steps, 4)
    fail = kernels.rk4_bolza(p.beta, p.gamma, spec.weight, x0, grid.h, grid.steps, values, states)
    if fail >= 0:
        raise IntegrationError(int(fail))
    return states


def evaluate_cost(spec: OcpSpec, u) -> Cost:
    """J = I(T) + running cost, with the running cost integrated as the state Y."""
    values = _as_values(spec, u)
    final = _forward(spec, values)[-1]
    return Cost(float(final[1] + final[3]), float(final[1]), float(final[3]))


def mayer_trajectory(spec: OcpSpec, u) -> Trajectory:
    values = _as_values(spec, u)
    p, ic, grid = spec.params, spec.ic, spec.grid
    x0 = np.array([ic.s0, ic.r0, 0.0])
    states = kernels.empty_states(grid.steps, 3)
    fail = kernels.rk4_mayer(p.beta, p.gamma, p.population, spec.weight, x0, grid.h, grid.steps, values, states)
    if fail >= 0:
        raise IntegrationError(int(fail))
    return Trajectory(grid, states, ("S", "R", "Y"), sample_controls(spec.control(values), grid.steps))


def mayer_objective(spec: OcpSpec, u) -> float:
    """N - S(T) - R(T) + Y(T) from the reduced system."""
    final = mayer_trajectory(spec, u).final()
    return float(spec.params.population - final[0] - final[1] + final[2])


def mayer_gradient(spec: OcpSpec, u) -> tuple[float, np.ndarray]:
    """Mayer objective and its exact gradient with respect to the cell values."""
    values = _as_values(spec, u)
    return _objective_and_gradient(spec, values)


def _objective_and_gradient(spec: OcpSpec, values: np.ndarray) -> tuple[float, np.ndarray]:
    p, ic, grid = spec.params, spec.ic, spec.grid
    n = p.population
    x0 = np.array([ic.s0, ic.r0, 0.0])
    states = kernels.empty_states(grid.steps, 3)
    fail = kernels.rk4_mayer(p.beta, p.gamma, n, spec.weight, x0, grid.h, grid.steps, values, states)
    if fail >= 0:
        raise IntegrationError(int(fail))
    grad = np.empty(spec.cells)
    kernels.mayer_adjoint_gradient(p.beta, p.gamma, n, spec.weight, grid.h, grid.steps, values, states, grad)
    final = states[-1]
    return float(n - final[0] - final[1] + final[2]), grad


def pmp_control_candidate(infected, lambda_i, lambda_r, b: float, lower: float = 0.0, upper: float = 1.0):
    """Pointwise minimiser of H in u: clip(I (lI - lR) / (2 b), lower, upper)."""
    if not b > 0:
        raise DomainError("cost weight must be positive")
    raw = np.asarray(infected) * (np.asarray(lambda_i) - np.asarray(lambda_r)) / (2.0 * b)
    out = np.clip(raw, lower, upper)
    return float(out) if out.ndim == 0 else out


def _costates(spec: OcpSpec, values: np.ndarray, states: np.ndarray) -> np.ndarray:
    p, grid = spec.params, spec.grid
    lam = kernels.empty_states(grid.steps, 3)
    terminal = np.array([TERMINAL_ADJOINT.lambda_s, TERMINAL_ADJOINT.lambda_i, TERMINAL_ADJOINT.lambda_r])
    fail = kernels.rk4_costate(p.beta, p.gamma, grid.h, grid.steps, values, states, terminal, lam)
    if fail >= 0:
        raise IntegrationError(int(fail), f"non-finite costate at step {fail}")
    return lam


def _cell_candidate(spec: OcpSpec, states: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Minimiser of the Hamiltonian integrated over each control cell.

    With u constant on a cell the integrated H is quadratic in u, so the
    minimiser is the pointwise rule applied to the cell mean of I (lI - lR)
    (trapezoid average over the integrator nodes of the cell).
    """
    per_cell = spec.grid.steps // spec.cells
    switch = states[:, 1] * (lam[:, 1] - lam[:, 2])
    body = switch[:-1].reshape(spec.cells, per_cell)
    ends = switch[per_cell::per_cell]
    mean = (body.sum(axis=1) - 0.5 * body[:, 0] + 0.5 * ends) / per_cell
    return pmp_control_candidate(mean, 1.0, 0.0, spec.weight, spec.lower, spec.upper)


def _report(spec, method, values, adjoint, iterations, converged, residuals, message) -> SolveReport:
    control = spec.control(values)
    states = _forward(spec, control.values)
    traj = Trajectory(spec.grid, states, ("S", "I", "R", "Y"), sample_controls(control, spec.grid.steps))
    final = states[-1]
    return SolveReport(
        method=method,
        spec=spec,
        control=control,
        trajectory=traj,
        adjoint=adjoint,
        cost=float(final[1] + final[3]),
        terminal_infected=float(final[1]),
        running_cost=float(final[3]),
        iterations=iterations,
        converged=converged,
        residuals=tuple(residuals),
        message=message,
    )


def solve_fbsm(spec: OcpSpec, initial=None) -> SolveReport:
    """Forward-backward sweep with relaxed updates u <- (1 - w) u + w u_candidate.

    ``w`` starts at ``spec.relaxation`` and is halved whenever the fixed-point
    residual grows, which damps the oscillation that appears when intervention
    is cheap.  Stops once the relative L1 distance between u and its candidate
    drops to ``spec.fbsm_tol``; hitting the iteration cap yields a report with
    ``converged=False``.
    """
    values = np.zeros(spec.cells) if initial is None else _as_values(spec, initial).copy()
    omega = spec.relaxation
    residuals = []
    converged = False
    iterations = 0
    for iterations in range(1, spec.fbsm_max_iter + 1):
        states = _forward(spec, values)
        lam = _costates(spec, values, states)
        candidate = _cell_candidate(spec, states, lam)
        gap = np.abs(candidate - values).sum()
        scale = np.abs(candidate).sum()
        rel = float(gap / scale) if scale > 0 else float(gap)
        if residuals and rel > residuals[-1]:
            omega = max(0.5 * omega, MIN_RELAXATION)
        residuals.append(rel)
        if rel <= spec.fbsm_tol:
            converged = True
            values = candidate
            break
        values = np.clip((1.0 - omega) * values + omega * candidate, spec.lower, spec.upper)
    lam = _costates(spec, values, _forward(spec, values))
    msg = "converged" if converged else f"iteration cap {spec.fbsm_max_iter} reached"
    log.debug("fbsm: %s after %d iterations (residual %.3e, relaxation %g)", msg, iterations, residuals[-1], omega)
    return _report(spec, FBSM, values, lam, iterations, converged, residuals, msg)


def solve_direct(spec: OcpSpec, initial=None) -> SolveReport:
    """Projected gradient descent on the transcribed Mayer objective.

    Steps follow the L2 gradient of the cell controls (gradient divided by the
    cell width) with a Barzilai-Borwein trial length, projection onto the
    bounds, and Armijo backtracking by halving.  Converged means the projected
    gradient step has max-norm <= ``spec.direct_tol``.
    """
    lo, up = spec.lower, spec.upper
    width = spec.cell_width
    x = np.zeros(spec.cells) if initial is None else _as_values(spec, initial).copy()
    f, grad = _objective_and_gradient(spec, x)
    alpha = 1.0
    residuals = []
    converged = False
    message = f"iteration cap {spec.direct_max_iter} reached"
    iterations = 0
    for iterations in range(1, spec.direct_max_iter + 1):
        g = grad / width
        pg = np.clip(x - g, lo, up) - x
        pg_norm = float(np.abs(pg).max())
        residuals.append(pg_norm)
        if pg_norm <= spec.direct_tol:
            converged = True
            message = "converged"
            break
        while True:
            trial = np.clip(x - alpha * g, lo, up)
            f_trial, grad_trial = _objective_and_gradient(spec, trial)
            if f_trial <= f + spec.armijo * float(grad @ (trial - x)):
                break
            alpha *= 0.5
            if alpha < 1e-16:
                break
        if alpha < 1e-16:
            message = "line search failed"
            break
        s = trial - x
        y = (grad_trial - grad) / width
        sy = float(s @ y)
        alpha = float(s @ s) / sy if sy > 0 else 1.0
        alpha = min(max(alpha, 1e-10), 1e10)
        x, f, grad = trial, f_trial, grad_trial
    log.debug("direct: %s after %d iterations (pg %.3e)", message, iterations, residuals[-1])
    return _report(spec, DIRECT, x, None, iterations, converged, residuals, message)


def solve(spec: OcpSpec, method: str = DIRECT, initial=None) -> SolveReport:
    if method == FBSM:
        return solve_fbsm(spec, initial)
    if method == DIRECT:
        return solve_direct(spec, initial)
    raise ValueError(f"unknown solver {method!r}; expected 'fbsm' or 'direct'")


def uncontrolled(spec: OcpSpec) -> Cost:
    """Cost of doing nothing (u = 0)."""
    return evaluate_cost(spec, np.zeros(spec.cells))


def sweep_weight(spec: OcpSpec, weights: Sequence[float], method: str = DIRECT, workers: int = 1) -> list[SolveReport]:
    """Solve the same problem for each cost weight b, in the given order."""
    weights = [float(b) for b in weights]
    for b in weights:
        if not b > 0:
            raise DomainError(f"cost weights must be positive, got {b}")
    specs = [spec.replace(weight=b) for b in weights]
    if workers > 1 and len(specs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda s: solve(s, method), specs))
    return [solve(s, method) for s in specs]
