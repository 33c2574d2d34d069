"""Fixed-step RK4 integration over a uniform time mesh."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .model import (
    BOLZA,
    CONTROLLED,
    MAYER,
    SIR,
    ControlGrid,
    DomainError,
    SirState,
    VectorField,
)

#: default step length in days
DEFAULT_STEP = 0.01
#: "contagion-free" means fewer than this many infected banks
DEFAULT_THRESHOLD = 1.0


class IntegrationError(RuntimeError):
    """A state became non-finite; ``step`` is the index of the failing step."""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"non-finite state produced at step {step}")


@dataclass(frozen=True)
class TimeGrid:
    t_start: float
    t_end: float
    steps: int

    def __post_init__(self):
        if not (math.isfinite(self.t_start) and math.isfinite(self.t_end)) or self.t_end <= self.t_start:
            raise DomainError(f"time grid needs t_end > t_start, got [{self.t_start}, {self.t_end}]")
        if int(self.steps) != self.steps or self.steps < 1:
            raise DomainError(f"steps must be a positive integer, got {self.steps}")
        object.__setattr__(self, "steps", int(self.steps))

    @property
    def h(self) -> float:
        return (self.t_end - self.t_start) / self.steps

    @property
    def times(self) -> np.ndarray:
        return self.t_start + self.h * np.arange(self.steps + 1)

    @classmethod
    def with_step(cls, t_end: float, h: float = DEFAULT_STEP, t_start: float = 0.0, multiple_of: int = 1):
        """Grid whose step is at most ``h`` and whose step count divides by ``multiple_of``."""
        span = t_end - t_start
        blocks = max(1, math.ceil(span / (h * multiple_of) - 1e-9))
        return cls(t_start, t_end, blocks * multiple_of)


@dataclass(frozen=True)
class Trajectory:
    grid: TimeGrid
    states: np.ndarray = field(repr=False)
    columns: tuple[str, ...] = ("S", "I", "R")
    controls: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.states.shape[0] != self.grid.steps + 1:
            raise ValueError("state count does not match the grid")
        self.states.setflags(write=False)
        if self.controls is not None:
            if self.controls.shape[0] != self.grid.steps + 1:
                raise ValueError("control samples do not match the grid")
            self.controls.setflags(write=False)

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    def __getitem__(self, name: str) -> np.ndarray:
        return self.states[:, self.columns.index(name)]

    def final(self) -> np.ndarray:
        return self.states[-1]

    def sir(self, population: float | None = None) -> np.ndarray:
        """(steps+1, 3) array of S, I, R; Mayer trajectories need ``population``."""
        if "I" in self.columns:
            return self.states[:, [self.columns.index(c) for c in "SIR"]]
        if population is None:
            raise ValueError("population needed to recover I from a Mayer trajectory")
        s = self["S"]
        r = self["R"]
        return np.column_stack([s, population - s - r, r])

    def state(self, k: int = -1, population: float | None = None) -> SirState:
        return SirState.from_array(self.sir(population)[k])


def sample_controls(control: ControlGrid | None, steps: int) -> np.ndarray | None:
    """Control value used by each mesh node (the step starting there; last node repeats)."""
    if control is None:
        return None
    idx = (np.arange(steps + 1) * control.cells) // steps
    return control.values[np.minimum(idx, control.cells - 1)].copy()


def _check_span(grid: TimeGrid, control: ControlGrid) -> None:
    tol = 1e-9 * max(1.0, abs(grid.t_end))
    if abs(control.t_start - grid.t_start) > tol or abs(control.t_end - grid.t_end) > tol:
        raise DomainError(
            f"control mesh [{control.t_start}, {control.t_end}] does not span "
            f"the time grid [{grid.t_start}, {grid.t_end}]"
        )


def _python_rk4(f, x0: np.ndarray, grid: TimeGrid, controls: np.ndarray) -> np.ndarray:
    h = grid.h
    out = np.empty((grid.steps + 1, x0.size))
    out[0] = x0
    cells = controls.size
    for k in range(grid.steps):
        u = float(controls[(k * cells) // grid.steps])
        x = out[k]
        k1 = np.asarray(f(x, u), dtype=float)
        k2 = np.asarray(f(x + 0.5 * h * k1, u), dtype=float)
        k3 = np.asarray(f(x + 0.5 * h * k2, u), dtype=float)
        k4 = np.asarray(f(x + h * k3, u), dtype=float)
        out[k + 1] = x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(out[k + 1])):
            raise IntegrationError(k)
    return out


def integrate(field, x0, grid: TimeGrid, control: ControlGrid | None = None) -> Trajectory:
    """Classic RK4 with the control held at its cell value over each step.

    ``field`` is a :class:`VectorField` (compiled path) or any callable
    ``f(x, u) -> dx/dt`` (interpreted path).  ``x0`` is a :class:`SirState`
    or a sequence matching the field's dimension.
    """
    if isinstance(x0, SirState):
        x0 = x0.as_array()
    x0 = np.array(x0, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(x0)):
        raise IntegrationError(0, "non-finite initial state")
    if control is not None:
        _check_span(grid, control)
        cell_values = np.ascontiguousarray(control.values, dtype=np.float64)
    else:
        cell_values = np.zeros(1)

    if not isinstance(field, VectorField):
        states = _python_rk4(field, x0, grid, cell_values)
        columns = tuple(f"x{j}" for j in range(x0.size))
        if x0.size == 3:
            columns = ("S", "I", "R")
        return Trajectory(grid, states, columns, sample_controls(control, grid.steps))

    p = field.params
    if field.kind == SIR and control is not None:
        raise DomainError("the uncontrolled field takes no control")
    if field.kind == MAYER:
        if x0.size != 3:
            raise DomainError("Mayer state is (S, R, Y)")
        states = kernels.empty_states(grid.steps, 3)
        fail = kernels.rk4_mayer(
            p.beta, p.gamma, p.population, field.weight, x0, grid.h, grid.steps, cell_values, states
        )
    else:
        if field.kind == BOLZA:
            if x0.size == 3:
                x0 = np.append(x0, 0.0)
        elif x0.size != 3:
            raise DomainError("SIR state is (S, I, R)")
        else:
            x0 = np.append(x0, 0.0)
        states = kernels.empty_states(grid.steps, 4)
        fail = kernels.rk4_bolza(p.beta, p.gamma, field.weight, x0, grid.h, grid.steps, cell_values, states)
        if field.kind in (SIR, CONTROLLED):
            states = np.ascontiguousarray(states[:, :3])
    if fail >= 0:
        raise IntegrationError(int(fail))
    return Trajectory(grid, states, field.columns, sample_controls(control, grid.steps))


def time_to_contagion_free(traj: Trajectory, threshold: float = DEFAULT_THRESHOLD, population: float | None = None):
    """First mesh time with I below ``threshold`` and I non-increasing from there on.

    Returns ``None`` when the trajectory never settles below the threshold.
    """
    if not threshold > 0:
        raise DomainError("threshold must be positive")
    infected = traj.sir(population)[:, 1]
    rises = np.nonzero(np.diff(infected) > 0)[0]
    start = int(rises[-1]) + 1 if rises.size else 0
    below = np.nonzero(infected[start:] < threshold)[0]
    if below.size == 0:
        return None
    return float(traj.times[start + below[0]])


def simulate(params, ic, horizon: float, steps: int | None = None, control: ControlGrid | None = None) -> Trajectory:
    """Convenience wrapper: uncontrolled (or controlled) S, I, R from ``ic`` over [0, horizon]."""
    from .model import controlled_system, sir_system

    grid = TimeGrid(0.0, horizon, steps) if steps else TimeGrid.with_step(horizon)
    x0 = ic.state() if hasattr(ic, "state") else ic
    field = sir_system(params) if control is None else controlled_system(params)
    return integrate(field, x0, grid, control)
