"""Banking contagion as an SIR epidemic, with optimal Central-Bank intervention.

Quick start::

    from bankcontagion import Parameters, InitialConditions, simulate
    p = Parameters(beta=0.004, gamma=0.05)
    traj = simulate(p, InitialConditions.canonical(p.population), horizon=100)
"""

__version__ = "0.1.0"

from .calibration import CalibrationTargets, FitReport, Target, calibrate, residual
from .config import ConfigError, ScenarioConfig, load_config, resolve_params
from .integrator import IntegrationError, TimeGrid, Trajectory, integrate, simulate, time_to_contagion_free
from .model import (
    ControlGrid,
    DomainError,
    InitialConditions,
    Parameters,
    SirState,
    VectorField,
    bolza_system,
    controlled_field,
    controlled_system,
    mayer_field,
    mayer_system,
    sir_field,
    sir_system,
)
from .ocp import OcpSpec, SolveReport, evaluate_cost, mayer_objective, solve, solve_direct, solve_fbsm, sweep_weight
from .output import emit_plot_script, emit_summary, emit_trajectory, read_trajectory

__all__ = [
    "CalibrationTargets",
    "ConfigError",
    "ControlGrid",
    "DomainError",
    "FitReport",
    "InitialConditions",
    "IntegrationError",
    "OcpSpec",
    "Parameters",
    "ScenarioConfig",
    "SirState",
    "SolveReport",
    "Target",
    "TimeGrid",
    "Trajectory",
    "VectorField",
    "bolza_system",
    "calibrate",
    "controlled_field",
    "controlled_system",
    "emit_plot_script",
    "emit_summary",
    "emit_trajectory",
    "evaluate_cost",
    "integrate",
    "load_config",
    "mayer_field",
    "mayer_objective",
    "mayer_system",
    "read_trajectory",
    "residual",
    "resolve_params",
    "simulate",
    "sir_field",
    "sir_system",
    "solve",
    "solve_direct",
    "solve_fbsm",
    "sweep_weight",
    "time_to_contagion_free",
]
