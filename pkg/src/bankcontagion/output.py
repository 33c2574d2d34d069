"""Result files: trajectory CSV, run summaries and matplotlib plot scripts.

All writers produce identical bytes for identical inputs and replace the
target file atomically.
"""

from __future__ import annotations

import csv
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .integrator import Trajectory
from .model import ControlGrid, Parameters
from .ocp import Cost, SolveReport

HEADER = ("t", "S", "I", "R", "u")
DIGITS = 9


def format_value(x: float) -> str:
    """Fixed decimal with 9 significant digits; reported states are never negative."""
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"cannot emit non-finite value {x!r}")
    if x == 0.0:
        return "0"
    return np.format_float_positional(x, precision=DIGITS, unique=False, fractional=False, trim="-")


def _state(x: float) -> str:
    return format_value(max(float(x), 0.0))


def write_text(path, text: str) -> Path:
    """Write ``text`` with LF endings through a temporary file in the same directory."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="\n", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _rows(n: int, stride: int) -> list[int]:
    if stride < 1:
        raise ValueError("stride must be >= 1")
    rows = list(range(0, n, stride))
    if rows[-1] != n - 1:
        rows.append(n - 1)
    return rows


def format_trajectory(
    traj: Trajectory,
    control: ControlGrid | np.ndarray | None = None,
    stride: int = 1,
    population: float | None = None,
) -> str:
    """CSV text with header ``t,S,I,R,u``, one row per (decimated) mesh point.

    ``control`` defaults to the trajectory's own control samples; when there is
    none the ``u`` field is left empty.
    """
    sir = traj.sir(population)
    times = traj.times
    if control is None:
        u = traj.controls
    elif isinstance(control, ControlGrid):
        u = control.values[np.minimum((np.arange(times.size) * control.cells) // traj.grid.steps, control.cells - 1)]
    else:
        u = np.asarray(control, dtype=float)
    if u is not None and u.shape[0] != times.size:
        raise ValueError(f"control has {u.shape[0]} samples for {times.size} mesh points")
    lines = [",".join(HEADER)]
    for k in _rows(times.size, stride):
        s, i, r = sir[k]
        cells = [format_value(times[k]), _state(s), _state(i), _state(r), "" if u is None else _state(u[k])]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def emit_trajectory(traj: Trajectory, path, control=None, stride: int = 1, population: float | None = None) -> Path:
    return write_text(path, format_trajectory(traj, control, stride, population))


@dataclass(frozen=True)
class TrajectoryTable:
    t: np.ndarray
    S: np.ndarray
    I: np.ndarray  # noqa: E741
    R: np.ndarray
    u: np.ndarray | None


def read_trajectory(path) -> TrajectoryTable:
    """Parse a file written by :func:`emit_trajectory`."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != HEADER:
            raise ValueError(f"{path}: expected header {','.join(HEADER)}")
        rows = [row for row in reader if row]
    cols = list(zip(*rows)) if rows else [()] * 5
    num = [np.array([float(v) for v in c]) for c in cols[:4]]
    u = None if any(v == "" for v in cols[4]) or not rows else np.array([float(v) for v in cols[4]])
    return TrajectoryTable(*num, u)


@dataclass(frozen=True)
class ScenarioResult:
    """Everything reported for one scenario run."""

    name: str
    params: Parameters
    horizon: float
    uncontrolled: Cost
    solves: tuple[SolveReport, ...] = ()
    contagion_free_time: float | None = None
    fit_residual: float | None = None
    extra: dict = field(default_factory=dict)


def summary_metrics(results) -> dict:
    """Flat ``scenario.metric -> value`` mapping, one key per metric."""
    out = {}
    for res in results:
        p = f"{res.name}."
        out[p + "beta"] = res.params.beta
        out[p + "gamma"] = res.params.gamma
        out[p + "population"] = res.params.population
        out[p + "horizon"] = res.horizon
        if res.fit_residual is not None:
            out[p + "fit_residual"] = res.fit_residual
        out[p + "contagion_free_time"] = res.contagion_free_time
        out[p + "uncontrolled.J"] = res.uncontrolled.total
        out[p + "uncontrolled.I_T"] = res.uncontrolled.terminal_infected
        for rep in res.solves:
            q = f"{p}{rep.method}.b={rep.weight:g}."
            out[q + "J"] = rep.cost
            out[q + "I_T"] = rep.terminal_infected
            out[q + "running_cost"] = rep.running_cost
            out[q + "control_integral"] = rep.control_integral
            out[q + "iterations"] = rep.iterations
            out[q + "converged"] = rep.converged
            if res.uncontrolled.total > 0:
                out[q + "reduction"] = 1.0 - rep.cost / res.uncontrolled.total
        for key, value in res.extra.items():
            out[p + key] = value
    return out


def _fmt(x, spec=".4f"):
    if x is None:
        return "-"
    if isinstance(x, bool):
        return "yes" if x else "no"
    if isinstance(x, int):
        return str(x)
    return format(x, spec)


def summary_table(results) -> str:
    """Human-readable comparison of doing nothing against the optimal intervention."""
    head = (
        f"{'scenario':<10} {'beta':>11} {'gamma':>11} {'T':>6} {'J(u=0)':>10} {'I(T) u=0':>10} "
        f"{'solver':>7} {'b':>6} {'J*':>10} {'I(T)*':>10} {'int u':>8} {'iters':>6} {'conv':>5}"
    )
    lines = [head, "-" * len(head)]
    for res in results:
        left = (
            f"{res.name:<10} {res.params.beta:>11.6g} {res.params.gamma:>11.6g} {res.horizon:>6g} "
            f"{res.uncontrolled.total:>10.4f} {res.uncontrolled.terminal_infected:>10.4f}"
        )
        if not res.solves:
            lines.append(f"{left} {'simulation only (no optimization)':>60}")
        for rep in res.solves:
            lines.append(
                f"{left} {rep.method:>7} {rep.weight:>6g} {rep.cost:>10.4f} {rep.terminal_infected:>10.4f} "
                f"{rep.control_integral:>8.4f} {rep.iterations:>6d} {_fmt(rep.converged):>5}"
            )
        notes = []
        if not res.solves:
            free = res.contagion_free_time
            notes.append("not contagion-free within the horizon" if free is None else f"contagion-free at t = {free:.2f}")
        if res.fit_residual is not None:
            notes.append(f"fit residual {res.fit_residual:.2e}")
        if notes:
            lines.append(f"{'':<10} {'; '.join(notes)}")
    return "\n".join(lines) + "\n"


def emit_summary(results, out_dir=None, stem: str = "summary") -> tuple[str, dict]:
    """Return (table, metrics); with ``out_dir`` also write ``<stem>.txt`` and ``<stem>.json``."""
    results = list(results)
    if not results:
        raise ValueError("summary needs at least one scenario result")
    table = summary_table(results)
    metrics = summary_metrics(results)
    if out_dir is not None:
        out_dir = Path(out_dir)
        write_text(out_dir / f"{stem}.txt", table)
        write_text(out_dir / f"{stem}.json", json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    return table, metrics


_PLOT_HEAD = '''\
"""Plots generated by bankcontagion; run with python3 (needs matplotlib)."""

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

HERE = Path(__file__).resolve().parent


def load(name):
    with open(HERE / name, newline="") as fh:
        rows = list(csv.DictReader(fh))
    cols = {key: [float(r[key]) if r[key] != "" else float("nan") for r in rows] for key in ("t", "S", "I", "R", "u")}
    return cols

'''


def _has_control(path: Path) -> bool:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != HEADER:
            raise ValueError(f"{path}: not a trajectory file")
        first = next(reader, None)
    return bool(first) and first[4] != ""


def _relative(target: Path, base: Path) -> str:
    return os.path.relpath(target.resolve(), base.resolve()).replace(os.sep, "/")


def emit_plot_script(traj_files, path, sweep: dict | None = None) -> Path:
    """Write a matplotlib script plotting S, I, R (and u on a second axis) per file.

    ``sweep`` maps curve labels to trajectory files whose controls are drawn
    together in one comparison figure.  Paths in the script are relative to
    the script's directory.
    """
    path = Path(path)
    base = path.parent
    traj_files = [Path(f) for f in traj_files]
    sweep = {str(k): Path(v) for k, v in (sweep or {}).items()}
    for f in [*traj_files, *sweep.values()]:
        if not f.is_file():
            raise FileNotFoundError(f"trajectory file not found: {f}")
    body = [_PLOT_HEAD]
    for f in traj_files:
        rel = _relative(f, base)
        png = f.stem + ".png"
        body.append(f"data = load({rel!r})\n")
        body.append("fig, ax = plt.subplots(figsize=(7, 4))\n")
        for col, colour in (("S", "tab:blue"), ("I", "tab:red"), ("R", "tab:green")):
            body.append(f'ax.plot(data["t"], data[{col!r}], color={colour!r}, label={col!r})\n')
        body.append('ax.set_xlabel("t (days)")\nax.set_ylabel("banks")\n')
        if _has_control(f):
            body.append("ax2 = ax.twinx()\n")
            body.append('ax2.plot(data["t"], data["u"], color="black", linestyle="--", label="u")\n')
            body.append('ax2.set_ylabel("u")\nax2.set_ylim(0.0, 1.05)\n')
            body.append("ax2.legend(loc=\"center right\")\n")
        body.append('ax.legend(loc="upper right")\n')
        body.append(f"fig.tight_layout()\nfig.savefig(HERE / {png!r}, dpi=120)\nplt.close(fig)\n\n")
    if sweep:
        body.append("fig, ax = plt.subplots(figsize=(7, 4))\n")
        for label, f in sweep.items():
            body.append(f'data = load({_relative(f, base)!r})\nax.plot(data["t"], data["u"], label={label!r})\n')
        body.append('ax.set_xlabel("t (days)")\nax.set_ylabel("u")\nax.legend()\n')
        body.append('fig.tight_layout()\nfig.savefig(HERE / "control_sweep.png", dpi=120)\nplt.close(fig)\n')
    return write_text(path, "".join(body))
