"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line PASS/FAIL verdict; conftest prints them in the
terminal summary.
"""

import math
import time

import numpy as np
import pytest

from bankcontagion.calibration import INFECTED, SUSCEPTIBLE, CalibrationTargets, Target, calibrate
from bankcontagion.integrator import TimeGrid, integrate, time_to_contagion_free
from bankcontagion.model import InitialConditions, Parameters, SirState, controlled_field, controlled_system, sir_field, sir_system
from bankcontagion.ocp import (
    DIRECT,
    FBSM,
    evaluate_cost,
    mayer_gradient,
    mayer_objective,
    mayer_trajectory,
    solve,
    sweep_weight,
    uncontrolled,
)
from bankcontagion.ocp import _forward

SCENARIOS = ("portugal", "spain", "uk")
CANON = InitialConditions.canonical()
RESULTS = {}

# day-30 uncontrolled infections and optimal-cost ceilings per scenario
ANCHOR = {"portugal": 64.0, "spain": 124.0, "uk": 149.0}
CEILING = {"portugal": 5.0, "spain": 5.0, "uk": 8.0}
# contagion-free deadlines, and the day before which ES and UK must still be infected
DEADLINE = {"portugal": 365.0, "spain": 450.0, "uk": 1200.0}
STILL_INFECTED_AT = {"spain": 100.0, "uk": 100.0}


def record(number, ok, detail):
    RESULTS[number] = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    assert ok, RESULTS[number]


def log_uniform(rng, lo, hi):
    return math.exp(rng.uniform(math.log(lo), math.log(hi)))


@pytest.fixture(scope="module")
def solved(specs):
    """Both solvers on each calibrated scenario at T = 30, b = 1.5, with wall time."""
    start = time.perf_counter()
    out = {name: {m: solve(spec, m) for m in (FBSM, DIRECT)} for name, spec in specs.items()}
    return out, time.perf_counter() - start


def test_criterion_1_conservation_and_reduction(calibrated):
    start = time.perf_counter()
    rng = np.random.default_rng(1)
    worst = 0.0
    cases = [(params, cfg.simulate.horizon) for cfg, params, _ in calibrated.values()]
    cases += [(Parameters(log_uniform(rng, 1e-5, 0.01), log_uniform(rng, 1e-3, 0.5)), 100.0) for _ in range(100)]
    bit_identical = True
    for params, horizon in cases:
        grid = TimeGrid.with_step(horizon)
        traj = integrate(sir_system(params), CANON.state(), grid)
        worst = max(worst, np.max(np.abs(traj.states.sum(axis=1) - params.population)) / params.population)
        for x in traj.states[:: max(1, grid.steps // 50)]:
            s = SirState.from_array(x)
            bit_identical &= controlled_field(params, s, 0.0) == sir_field(params, s)
    for params, horizon in cases[:3]:
        grid = TimeGrid.with_step(horizon)
        free = integrate(sir_system(params), CANON.state(), grid)
        zero = integrate(controlled_system(params), CANON.state(), grid, None)
        bit_identical &= free.states.tobytes() == zero.states.tobytes()
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-9 and bit_identical and elapsed < 10.0
    record(1, ok, f"max |S+I+R-N|/N = {worst:.2e} over {len(cases)} runs, u=0 bit-identical: {bit_identical}, {elapsed:.1f} s")


def test_criterion_2_integrator_order():
    def error(h):
        traj = integrate(sir_system(Parameters(0.0, 1.0)), CANON.state(), TimeGrid(0.0, 10.0, round(10.0 / h)))
        return abs(traj["I"][-1] - math.exp(-10.0))

    errors = [error(h) for h in (0.04, 0.02, 0.01)]
    ratios = [a / b for a, b in zip(errors, errors[1:])]
    ok = all(12.0 <= r <= 20.0 for r in ratios)
    record(2, ok, "error ratios per halving " + ", ".join(f"{r:.2f}" for r in ratios) + " (want 16 +/- 25%)")


def test_criterion_3_bolza_mayer_equivalence(specs):
    spec = specs["portugal"]
    rng = np.random.default_rng(3)
    cost_gap = path_gap = 0.0
    for _ in range(50):
        u = rng.uniform(0.0, 1.0, spec.cells)
        bolza = evaluate_cost(spec, u).total
        mayer = mayer_objective(spec, u)
        cost_gap = max(cost_gap, abs(bolza - mayer))
        b_states = _forward(spec, u)
        m_states = mayer_trajectory(spec, u).states
        path_gap = max(path_gap, np.max(np.abs(b_states[:, 0] - m_states[:, 0])), np.max(np.abs(b_states[:, 2] - m_states[:, 1])))
    ok = cost_gap <= 1e-8 and path_gap <= 1e-8
    record(3, ok, f"max |J_Bolza - J_Mayer| = {cost_gap:.2e}, max pointwise |dS|,|dR| = {path_gap:.2e} over 50 controls")


def test_criterion_4_gradient_oracle(specs):
    rng = np.random.default_rng(4)
    worst = 0.0
    for cells in (10, 50):
        spec = specs["portugal"].replace(cells=cells)
        for _ in range(3):
            u = rng.uniform(0.05, 0.95, cells)
            _, grad = mayer_gradient(spec, u)
            fd = np.empty(cells)
            for k in range(cells):
                up, dn = u.copy(), u.copy()
                up[k] += 1e-5
                dn[k] -= 1e-5
                fd[k] = (mayer_objective(spec, up) - mayer_objective(spec, dn)) / 2e-5
            worst = max(worst, np.max(np.abs(grad - fd) / np.abs(fd)))
    record(4, worst <= 1e-4, f"max relative adjoint-vs-FD error {worst:.2e} on 10- and 50-cell controls")


def test_criterion_5_cross_solver_agreement(solved):
    reports, elapsed = solved
    parts, ok = [], elapsed < 60.0
    for name in SCENARIOS:
        fb, dr = reports[name][FBSM], reports[name][DIRECT]
        gap = abs(fb.cost - dr.cost)
        good = fb.converged and dr.converged and gap <= max(1e-3, 0.005 * dr.cost)
        ok &= good
        parts.append(f"{name} |dJ| = {gap:.1e} ({fb.iterations}/{dr.iterations} it)")
    record(5, ok, "; ".join(parts) + f"; {elapsed:.1f} s")


def test_criterion_6_cost_table(specs, solved):
    reports, _ = solved
    parts, ok = [], True
    for name in SCENARIOS:
        free = uncontrolled(specs[name]).total
        best = min(reports[name][FBSM].cost, reports[name][DIRECT].cost)
        worst = max(reports[name][FBSM].cost, reports[name][DIRECT].cost)
        reduction = 1.0 - worst / free
        good = abs(free / ANCHOR[name] - 1) <= 0.02 and worst <= CEILING[name] and reduction >= 0.9
        ok &= good
        parts.append(f"{name} J(u=0) = {free:.2f} J* = {best:.3f} (-{100 * reduction:.1f}%)")
    record(6, ok, "; ".join(parts))


def test_criterion_7_weight_monotonicity(specs):
    parts, ok = [], True
    for name in SCENARIOS:
        reps = sweep_weight(specs[name], [0.5, 1.5, 5.0], DIRECT, workers=3)
        integrals = [r.control_integral for r in reps]
        costs = [r.cost for r in reps]
        good = all(r.converged for r in reps)
        good &= all(a >= b for a, b in zip(integrals, integrals[1:]))
        good &= all(a <= b for a, b in zip(costs, costs[1:]))
        ok &= good
        parts.append(f"{name} int u = " + "/".join(f"{v:.2f}" for v in integrals) + " J = " + "/".join(f"{v:.2f}" for v in costs))
    record(7, ok, "; ".join(parts))


def test_criterion_8_contagion_free_times(calibrated):
    parts, ok = [], True
    for name in SCENARIOS:
        _, params, _ = calibrated[name]
        traj = integrate(sir_system(params), CANON.state(), TimeGrid.with_step(1300.0))
        t = time_to_contagion_free(traj)
        good = t is not None and t <= DEADLINE[name]
        if name in STILL_INFECTED_AT:
            good &= t is not None and t > STILL_INFECTED_AT[name]
        ok &= good
        parts.append(f"{name} I<1 from day {t:.2f} (deadline {DEADLINE[name]:g})")
    record(8, ok, "; ".join(parts))


def draws(n=20, seed=2026):
    """(beta, gamma) pairs that produce an outbreak (R0 = beta N / gamma >= 1.5)."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        b, g = log_uniform(rng, 5e-4, 5e-3), log_uniform(rng, 5e-3, 0.2)
        if b * 169.0 / g >= 1.5:
            out.append((b, g))
    return out


def synthetic(b, g, observables):
    traj = integrate(sir_system(Parameters(b, g)), CANON.state(), TimeGrid.with_step(100.0))
    col = {INFECTED: "I", SUSCEPTIBLE: "S"}
    return CalibrationTargets(tuple(Target(obs, float(traj[col[obs]][int(day * 100)]), day=day) for obs, day in observables))


def test_criterion_9_calibration_round_trip():
    start = time.perf_counter()
    worst = 0.0
    for b, g in draws():
        fit = calibrate(synthetic(b, g, [(INFECTED, 30), (INFECTED, 100), (SUSCEPTIBLE, 30)]))
        worst = max(worst, abs(fit.params.beta / b - 1), abs(fit.params.gamma / g - 1))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-3 and elapsed < 30.0
    record(9, ok, f"targets I(30), I(100), S(30): max relative error {worst:.1e} over 20 draws, {elapsed:.1f} s")


def test_criterion_9_two_infected_targets_are_flagged():
    # I(30) and I(100) alone are often matched by two distinct pairs; the fit
    # must then find the truth and report the ambiguity
    best_hits = listed = 0
    for b, g in draws():
        fit = calibrate(synthetic(b, g, [(INFECTED, 30), (INFECTED, 100)]))
        close = [max(abs(a.beta / b - 1), abs(a.gamma / g - 1)) <= 1e-3 for a in fit.alternatives]
        hit = max(abs(fit.params.beta / b - 1), abs(fit.params.gamma / g - 1)) <= 1e-3
        best_hits += hit
        listed += any(close) and (hit or not fit.unique)
    RESULTS["9b"] = (
        f"criterion 9b: {'PASS' if listed == 20 else 'FAIL'}  targets I(30), I(100): truth is the best fit in "
        f"{best_hits}/20 draws and is found and flagged in {listed}/20"
    )
    assert listed == 20, RESULTS["9b"]
