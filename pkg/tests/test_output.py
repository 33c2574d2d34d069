import json
import subprocess
import sys

import numpy as np
import pytest

from bankcontagion.integrator import TimeGrid, Trajectory, integrate, simulate
from bankcontagion.model import ControlGrid, InitialConditions, Parameters, controlled_system, mayer_system
from bankcontagion.ocp import Cost, solve_direct
from bankcontagion.output import (
    ScenarioResult,
    emit_plot_script,
    emit_summary,
    emit_trajectory,
    format_trajectory,
    format_value,
    read_trajectory,
)

from .conftest import small_spec

P = Parameters(0.0013, 0.05)
CANON = InitialConditions.canonical()


def three_steps():
    return simulate(P, CANON, 3.0, steps=3)


class TestTrajectoryCsv:
    def test_rows_and_header(self):
        lines = format_trajectory(three_steps()).split("\n")
        assert lines[0] == "t,S,I,R,u"
        assert len(lines) == 6 and lines[-1] == ""
        assert lines[1] == "0,168,1,0,"

    def test_blank_control_column(self):
        for row in format_trajectory(three_steps()).splitlines()[1:]:
            assert row.endswith(",") and row.count(",") == 4

    def test_control_column(self):
        u = ControlGrid(0.0, 4.0, [0.1, 0.2])
        traj = integrate(controlled_system(P), CANON.state(), TimeGrid(0.0, 4.0, 4), u)
        rows = format_trajectory(traj).splitlines()[1:]
        assert [r.rsplit(",", 1)[1] for r in rows] == ["0.1", "0.1", "0.2", "0.2", "0.2"]

    def test_nine_significant_digits(self):
        assert format_value(1 / 3) == "0.333333333"
        assert format_value(168.123456789123) == "168.123457"
        assert format_value(2.5e-7) == "0.00000025"
        with pytest.raises(ValueError):
            format_value(float("nan"))

    def test_negative_states_clamped(self):
        states = np.array([[168.0, 1.0, 0.0], [169.0, -1e-17, 0.0]])
        rows = format_trajectory(Trajectory(TimeGrid(0.0, 1.0, 1), states)).splitlines()
        assert rows[2] == "1,169,0,0,"

    def test_stride_keeps_last_row(self):
        traj = simulate(P, CANON, 1.0, steps=10)
        times = [r.split(",")[0] for r in format_trajectory(traj, stride=4).splitlines()[1:]]
        assert times == ["0", "0.4", "0.8", "1"]

    def test_round_trip(self, tmp_path):
        traj = simulate(P, CANON, 30.0)
        path = emit_trajectory(traj, tmp_path / "t.csv")
        back = read_trajectory(path)
        assert back.u is None
        for col in "SIR":
            want = traj[col]
            rel = np.abs(getattr(back, col) - want) / np.maximum(np.abs(want), 1e-300)
            # 9 significant digits bound the relative error by half a unit in the 9th digit
            assert np.max(rel[want > 0]) <= 5e-9
        assert np.max(np.abs(back.t - traj.times)) <= 5e-9 * 30
        # and the parsed values re-emit to the same bytes
        again = Trajectory(traj.grid, np.column_stack([back.S, back.I, back.R]))
        assert format_trajectory(again) == path.read_text()

    def test_bytes_are_deterministic(self, tmp_path):
        rep = solve_direct(small_spec())
        a = emit_trajectory(rep.trajectory, tmp_path / "a.csv").read_bytes()
        b = emit_trajectory(solve_direct(small_spec()).trajectory, tmp_path / "b.csv").read_bytes()
        assert a == b and b"\r" not in a

    def test_mayer_trajectory_needs_population(self, tmp_path):
        u = ControlGrid.constant(0.0, 2.0, 0.5, 2)
        traj = integrate(mayer_system(P, 1.5), [168.0, 0.0, 0.0], TimeGrid(0.0, 2.0, 20), u)
        with pytest.raises(ValueError):
            format_trajectory(traj)
        back = read_trajectory(emit_trajectory(traj, tmp_path / "m.csv", population=169.0))
        assert back.I[0] == 1.0 and np.all(back.u == 0.5)

    def test_control_length_checked(self):
        with pytest.raises(ValueError):
            format_trajectory(three_steps(), control=np.zeros(2))

    def test_unwritable_path(self, tmp_path):
        with pytest.raises(OSError):
            emit_trajectory(three_steps(), tmp_path / "missing" / "t.csv")

    def test_read_rejects_foreign_file(self, tmp_path):
        (tmp_path / "x.csv").write_text("a,b\n1,2\n")
        with pytest.raises(ValueError):
            read_trajectory(tmp_path / "x.csv")


def result(solves=(), free=None, name="portugal", total=64.0):
    return ScenarioResult(
        name=name,
        params=P,
        horizon=30.0,
        uncontrolled=Cost(total, total, 0.0),
        solves=tuple(solves),
        contagion_free_time=free,
    )


class TestSummary:
    def test_simulation_only_row(self):
        table, metrics = emit_summary([result(free=140.0)])
        assert "simulation only" in table
        assert "contagion-free at t = 140.00" in table
        assert metrics["portugal.uncontrolled.J"] == 64.0
        assert not any(".fbsm." in k or ".direct." in k for k in metrics)

    def test_solver_rows_and_metrics(self, tmp_path):
        rep = solve_direct(small_spec())
        table, metrics = emit_summary([result([rep], total=rep.cost * 2)], tmp_path)
        assert " direct " in table and "simulation only" not in table
        key = "portugal.direct.b=1.5."
        assert metrics[key + "J"] == rep.cost and metrics[key + "converged"] is True
        assert metrics[key + "reduction"] == pytest.approx(0.5)
        assert json.loads((tmp_path / "summary.json").read_text()) == metrics
        assert (tmp_path / "summary.txt").read_text() == table

    def test_one_key_per_metric(self):
        _, metrics = emit_summary([result(name="uk", total=149.0), result(name="spain", total=124.0)])
        assert all(not isinstance(v, (dict, list)) for v in metrics.values())
        assert metrics["uk.uncontrolled.J"] == 149.0 and metrics["spain.uncontrolled.J"] == 124.0

    def test_needs_a_result(self):
        with pytest.raises(ValueError):
            emit_summary([])


class TestPlotScript:
    @pytest.fixture
    def files(self, tmp_path):
        free = emit_trajectory(three_steps(), tmp_path / "free.csv")
        sweep = {}
        for b in (0.5, 1.5, 5.0):
            rep = solve_direct(small_spec(weight=b))
            sweep[f"b = {b:g}"] = emit_trajectory(rep.trajectory, tmp_path / f"ctl_b{b:g}.csv", stride=50)
        return tmp_path, free, sweep

    def test_three_curves_without_control(self, files):
        tmp, free, _ = files
        text = emit_plot_script([free], tmp / "plot.py").read_text()
        assert "'free.csv'" in text
        assert text.count("ax.plot(") == 3 and "twinx" not in text
        for col in ("'S'", "'I'", "'R'"):
            assert f"data[{col}]" in text

    def test_control_on_secondary_axis(self, files):
        tmp, _, sweep = files
        text = emit_plot_script([sweep["b = 1.5"]], tmp / "plot.py").read_text()
        assert text.count("ax.plot(") == 3 and text.count("ax2.plot(") == 1
        assert 'data["u"]' in text and "twinx" in text

    def test_sweep_comparison(self, files):
        tmp, _, sweep = files
        text = emit_plot_script([], tmp / "plot.py", sweep=sweep).read_text()
        assert text.count('ax.plot(data["t"], data["u"]') == 3
        for label, path in sweep.items():
            assert repr(label) in text and repr(path.name) in text
        assert "control_sweep.png" in text

    def test_missing_input(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            emit_plot_script([tmp_path / "nope.csv"], tmp_path / "plot.py")

    def test_script_runs(self, files):
        pytest.importorskip("matplotlib")
        tmp, free, sweep = files
        script = emit_plot_script([free, sweep["b = 5"]], tmp / "plot.py", sweep=sweep)
        subprocess.run([sys.executable, str(script)], check=True, cwd=tmp.parent)
        assert {p.name for p in tmp.glob("*.png")} == {"free.png", "ctl_b5.png", "control_sweep.png"}
