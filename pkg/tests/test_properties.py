import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from bankcontagion.calibration import AT_LEAST, AT_MOST, EQUALS, Target
from bankcontagion.config import parse_target
from bankcontagion.integrator import TimeGrid, integrate, time_to_contagion_free
from bankcontagion.model import (
    ControlGrid,
    InitialConditions,
    Parameters,
    SirState,
    controlled_field,
    controlled_system,
    mayer_field,
    sir_field,
)
from bankcontagion.ocp import pmp_control_candidate
from bankcontagion.output import format_value

EPS = np.finfo(float).eps
rate = st.floats(0.0, 0.2, allow_nan=False)
count = st.floats(0.0, 500.0, allow_nan=False)
level = st.floats(0.0, 1.0)


@given(rate, rate, count, count, count, level)
def test_flows_balance(beta, gamma, s, i, r, u):
    p = Parameters(beta, gamma)
    x = SirState(s, i, r)
    assert controlled_field(p, x, 0.0) == sir_field(p, x)
    d = controlled_field(p, x, u)
    assert abs(math.fsum(d)) <= 4 * EPS * max(map(abs, d))


@given(rate, rate, st.floats(0.0, 1.0), st.floats(0.0, 1.0), level, st.floats(0.01, 100.0))
def test_mayer_reduction(beta, gamma, fs, fr, u, b):
    p = Parameters(beta, gamma)
    s = fs * p.population
    r = fr * (p.population - s)
    ds, dr, dy = mayer_field(p, s, r, u, b)
    cs, _, cr = controlled_field(p, SirState(s, p.population - s - r, r), u)
    tol = 1e-12 * max(1.0, beta * p.population**2, (gamma + u) * p.population)
    assert abs(ds - cs) <= tol and abs(dr - cr) <= tol
    assert dy == b * u * u


@given(st.floats(0.0, 1e4), st.floats(-10, 10), st.floats(-10, 10), st.floats(1e-3, 1e3), level, level)
def test_candidate_within_bounds(i, li, lr, b, a, c):
    lower, upper = min(a, c), max(a, c)
    u = pmp_control_candidate(i, li, lr, b, lower, upper)
    assert lower <= u <= upper


@settings(max_examples=30, deadline=None)
@given(st.floats(1e-5, 0.01), st.floats(1e-3, 0.5), st.lists(level, min_size=1, max_size=8))
def test_integration_conserves_population(beta, gamma, values):
    p = Parameters(beta, gamma)
    u = ControlGrid(0.0, 20.0, values)
    traj = integrate(controlled_system(p), InitialConditions.canonical().state(), TimeGrid(0.0, 20.0, 2000), u)
    assert np.max(np.abs(traj.states.sum(axis=1) - 169.0)) <= 1e-9 * 169.0


@settings(max_examples=30, deadline=None)
@given(st.floats(1e-5, 0.01), st.floats(1e-3, 0.5))
def test_contagion_free_is_settled(beta, gamma):
    p = Parameters(beta, gamma)
    traj = integrate(controlled_system(p), InitialConditions.canonical().state(), TimeGrid(0.0, 50.0, 500))
    t = time_to_contagion_free(traj)
    if t is not None:
        k = int(round(t / traj.grid.h))
        tail = traj["I"][k:]
        assert tail[0] < 1.0 and np.all(np.diff(tail) <= 0)


@given(st.floats(-1e12, 1e12, allow_nan=False).filter(lambda x: x == 0 or abs(x) > 1e-200))
def test_nine_digit_format(x):
    text = format_value(x)
    assert "e" not in text and "," not in text
    back = float(text)
    assert abs(back - x) <= 5e-9 * abs(x)


@given(
    st.sampled_from(["infected", "susceptible", "recovered"]),
    st.floats(0.5, 1000.0),
    st.floats(0.0, 500.0),
    st.sampled_from([EQUALS, AT_MOST, AT_LEAST]),
)
def test_target_text_round_trip(obs, day, value, comparator):
    t = Target(obs, value, comparator, day)
    back = parse_target(str(t))
    assert back.observable == obs and back.comparator == comparator
    assert math.isclose(back.day, day, rel_tol=1e-5) and math.isclose(back.value, value, rel_tol=1e-5, abs_tol=1e-5)
