"""Domain types and vector fields of the SIR banking-contagion model.

Three right-hand sides are provided:

* ``sir_field``        uncontrolled S, I, R dynamics;
* ``controlled_field`` the same with Central-Bank assistance ``u`` acting as
  extra recovery of infected banks;
* ``mayer_field``      the reduced (S, R, Y) system, where I = N - S - R and Y
  accumulates the running intervention cost b*u**2.

Compartments are real-valued bank counts.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

#: s0 must exceed this multiple of i0 to count as "many more susceptible than infected"
DOMINANCE_RATIO = 10.0


class DomainError(ValueError):
    """Raised when an argument lies outside the model's domain."""


def _finite(*values: float) -> bool:
    return all(math.isfinite(v) for v in values)


@dataclass(frozen=True)
class Parameters:
    """Model constants: contagion rate, recovery rate and number of banks."""

    beta: float
    gamma: float
    population: float = 169.0

    def __post_init__(self):
        if not _finite(self.beta, self.gamma, self.population):
            raise DomainError(f"non-finite parameters {self}")
        if self.beta < 0 or self.gamma < 0:
            raise DomainError(f"rates must be non-negative, got beta={self.beta}, gamma={self.gamma}")
        if self.population <= 0:
            raise DomainError(f"population must be positive, got {self.population}")

    @property
    def degenerate(self) -> bool:
        """True when both rates vanish and nothing ever moves."""
        return self.beta == 0 and self.gamma == 0

    def replace(self, **changes) -> "Parameters":
        data = {"beta": self.beta, "gamma": self.gamma, "population": self.population}
        data.update(changes)
        return Parameters(**data)


@dataclass(frozen=True)
class SirState:
    susceptible: float
    infected: float
    recovered: float

    @property
    def total(self) -> float:
        return self.susceptible + self.infected + self.recovered

    def as_array(self) -> np.ndarray:
        return np.array([self.susceptible, self.infected, self.recovered], dtype=float)

    @classmethod
    def from_array(cls, x) -> "SirState":
        return cls(float(x[0]), float(x[1]), float(x[2]))

    def clamped(self) -> "SirState":
        """Copy with integration undershoot below zero removed (reporting only)."""
        return SirState(max(self.susceptible, 0.0), max(self.infected, 0.0), max(self.recovered, 0.0))


@dataclass(frozen=True)
class InitialConditions:
    """Compartment counts at t = 0.

    Requires i0 > 0 and r0 = 0.  A susceptible pool smaller than
    ``DOMINANCE_RATIO * i0`` is accepted with a warning.
    """

    s0: float
    i0: float
    r0: float = 0.0

    def __post_init__(self):
        if not _finite(self.s0, self.i0, self.r0):
            raise DomainError("initial conditions must be finite")
        if self.i0 <= 0:
            raise DomainError(f"I(0) > 0 required, got i0={self.i0}")
        if self.r0 != 0:
            raise DomainError(f"R(0) = 0 required, got r0={self.r0}")
        if self.s0 < 0:
            raise DomainError(f"S(0) must be non-negative, got s0={self.s0}")
        if self.s0 < DOMINANCE_RATIO * self.i0:
            warnings.warn(
                f"s0={self.s0} is less than {DOMINANCE_RATIO:g}*i0; the susceptible pool "
                "does not dominate the initially infected",
                stacklevel=3,
            )

    @property
    def population(self) -> float:
        return self.s0 + self.i0 + self.r0

    def check_population(self, population: float, rtol: float = 1e-12) -> None:
        if abs(self.population - population) > rtol * population:
            raise DomainError(
                f"s0 + i0 + r0 = {self.population:g} does not match population N = {population:g}"
            )

    def state(self) -> SirState:
        return SirState(self.s0, self.i0, self.r0)

    @classmethod
    def canonical(cls, population: float = 169.0) -> "InitialConditions":
        """One infected bank, everyone else susceptible."""
        return cls(population - 1.0, 1.0, 0.0)


@dataclass(frozen=True)
class ControlGrid:
    """Piecewise-constant control on a uniform mesh of ``len(values)`` cells."""

    t_start: float
    t_end: float
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=float).reshape(-1)
        if values.size == 0:
            raise DomainError("control grid needs at least one cell")
        if not (math.isfinite(self.t_start) and math.isfinite(self.t_end)) or self.t_end <= self.t_start:
            raise DomainError(f"empty control horizon [{self.t_start}, {self.t_end}]")
        if not np.all(np.isfinite(values)) or values.min() < 0.0 or values.max() > 1.0:
            raise DomainError("control values must lie in [0, 1]")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def cells(self) -> int:
        return self.values.size

    @property
    def h(self) -> float:
        return (self.t_end - self.t_start) / self.values.size

    def __call__(self, t: float) -> float:
        """Control level at time t (left-closed cells, last cell closed)."""
        k = int((t - self.t_start) // self.h)
        return float(self.values[min(max(k, 0), self.cells - 1)])

    def integral(self) -> float:
        return float(self.values.sum() * self.h)

    def square_integral(self) -> float:
        return float(np.dot(self.values, self.values) * self.h)

    @classmethod
    def constant(cls, t_start: float, t_end: float, level: float, cells: int = 1) -> "ControlGrid":
        return cls(t_start, t_end, np.full(cells, float(level)))

    def __eq__(self, other):
        if not isinstance(other, ControlGrid):
            return NotImplemented
        return (
            self.t_start == other.t_start
            and self.t_end == other.t_end
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None


def _check_control(u: float) -> None:
    if not (0.0 <= u <= 1.0):
        raise DomainError(f"control level must lie in [0, 1], got {u}")


def sir_field(p: Parameters, x: SirState) -> tuple[float, float, float]:
    """(dS/dt, dI/dt, dR/dt) of the uncontrolled model."""
    s, i, r = x.susceptible, x.infected, x.recovered
    if not _finite(s, i, r):
        raise DomainError(f"non-finite state {x}")
    infection = p.beta * s * i
    recovery = p.gamma * i
    return (-infection, infection - recovery, recovery)


def controlled_field(p: Parameters, x: SirState, u: float) -> tuple[float, float, float]:
    """Dynamics with assistance level ``u`` moving infected banks to recovered."""
    _check_control(u)
    s, i, r = x.susceptible, x.infected, x.recovered
    if not _finite(s, i, r):
        raise DomainError(f"non-finite state {x}")
    infection = p.beta * s * i
    recovery = p.gamma * i
    assisted = u * i
    # u = 0 must reproduce sir_field bit-for-bit: x - 0.0 and x + 0.0 are exact
    return (-infection, infection - recovery - assisted, recovery + assisted)


def mayer_field(p: Parameters, s: float, r: float, u: float, b: float) -> tuple[float, float, float]:
    """(dS/dt, dR/dt, dY/dt) of the reduced system with I eliminated."""
    _check_control(u)
    if not b > 0:
        raise DomainError(f"cost weight must be positive, got {b}")
    if not _finite(s, r):
        raise DomainError("non-finite state")
    n = p.population
    return (p.beta * s * s + p.beta * s * (r - n), (p.gamma + u) * (n - s - r), b * u * u)


# Field objects consumed by the integrator.  Known kinds dispatch to compiled
# kernels; anything else callable as f(x, u) is integrated in plain Python.

SIR = "sir"
CONTROLLED = "controlled"
BOLZA = "bolza"
MAYER = "mayer"


@dataclass(frozen=True)
class VectorField:
    """A model right-hand side bound to its parameters.

    ``kind`` is one of ``sir`` (S, I, R), ``controlled`` (S, I, R under u),
    ``bolza`` (S, I, R, Y) or ``mayer`` (S, R, Y).
    """

    kind: str
    params: Parameters
    weight: float = 0.0

    def __post_init__(self):
        if self.kind not in (SIR, CONTROLLED, BOLZA, MAYER):
            raise DomainError(f"unknown field kind {self.kind!r}")
        if self.kind in (BOLZA, MAYER) and not self.weight > 0:
            raise DomainError(f"{self.kind} field needs a positive cost weight")

    @property
    def columns(self) -> tuple[str, ...]:
        return {
            SIR: ("S", "I", "R"),
            CONTROLLED: ("S", "I", "R"),
            BOLZA: ("S", "I", "R", "Y"),
            MAYER: ("S", "R", "Y"),
        }[self.kind]

    @property
    def controlled(self) -> bool:
        return self.kind != SIR

    def __call__(self, x, u: float = 0.0) -> np.ndarray:
        p = self.params
        if self.kind == SIR:
            return np.array(sir_field(p, SirState(*x[:3])))
        if self.kind == CONTROLLED:
            return np.array(controlled_field(p, SirState(*x[:3]), u))
        if self.kind == BOLZA:
            d = controlled_field(p, SirState(*x[:3]), u)
            return np.array([*d, self.weight * u * u])
        return np.array(mayer_field(p, x[0], x[1], u, self.weight))


def sir_system(p: Parameters) -> VectorField:
    return VectorField(SIR, p)


def controlled_system(p: Parameters) -> VectorField:
    return VectorField(CONTROLLED, p)


def bolza_system(p: Parameters, weight: float) -> VectorField:
    return VectorField(BOLZA, p, weight)


def mayer_system(p: Parameters, weight: float) -> VectorField:
    return VectorField(MAYER, p, weight)


FieldLike = VectorField | Callable[[np.ndarray, float], np.ndarray]
