"""Command line entry point: ``bankcontagion {simulate,optimize,calibrate,sweep-b}``.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure
(integration blow-up, or non-convergence / failed fit under ``--strict``),
3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, load_config, resolve_params
from .integrator import IntegrationError, TimeGrid, integrate, time_to_contagion_free
from .model import DomainError, sir_system
from .ocp import DIRECT, FBSM, Cost, solve, sweep_weight, uncontrolled
from .output import ScenarioResult, emit_plot_script, emit_summary, emit_trajectory, write_text

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2
EXIT_IO = 3

log = logging.getLogger("bankcontagion")


class UsageError(Exception):
    pass


class NumericalFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def _weights(text):
    try:
        values = [float(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected numbers, got {text!r}") from None
    if not values or any(not v > 0 for v in values):
        raise argparse.ArgumentTypeError("weights must be positive")
    return values


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument(
        "--config",
        action="append",
        required=True,
        metavar="PATH",
        help="scenario file, or a bundled name (portugal, spain, uk); repeat for several",
    )
    shared.add_argument("--out", type=Path, default=Path("out"), metavar="DIR", help="output directory (default: out)")
    shared.add_argument("--solver", choices=(FBSM, DIRECT, "both"), help="override the configured solver")
    shared.add_argument("--steps", type=_positive_int, metavar="N", help="integrator steps over the horizon")
    shared.add_argument("--stride", type=_positive_int, default=1, metavar="K", help="write every K-th mesh point")
    shared.add_argument("--strict", action="store_true", help="exit 2 when a solver or fit does not converge")
    shared.add_argument("-v", "--verbose", action="count", default=0)

    parser = _Parser(prog="bankcontagion", description="Banking contagion SIR simulator and intervention planner.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("simulate", parents=[shared], help="integrate the uncontrolled model")
    sub.add_parser("optimize", parents=[shared], help="solve the optimal intervention problem")
    sub.add_parser("calibrate", parents=[shared], help="fit beta and gamma to the configured targets")
    sweep = sub.add_parser("sweep-b", parents=[shared], help="re-solve for several cost weights b")
    sweep.add_argument("--weights", type=_weights, metavar="LIST", help="override the configured weights")
    sweep.add_argument("--workers", type=_positive_int, default=1, help="solve sweep members in parallel")
    return parser


def _scenarios(args):
    for spec in args.config:
        cfg = load_config(spec)
        yield cfg


def _params(cfg, args):
    params, fit = resolve_params(cfg)
    if fit is not None:
        log.info("%s: %s", cfg.name, fit.describe())
        if not fit.success and args.strict:
            raise NumericalFailure(f"{cfg.name}: calibration failed ({fit.message})")
    return params, fit


def _methods(cfg, args, default="both"):
    choice = args.solver or (cfg.optimize.solver if cfg.optimize else default)
    return (FBSM, DIRECT) if choice == "both" else (choice,)


def _check(reports, args):
    bad = [f"{r.method} (b={r.weight:g}): {r.message}" for r in reports if not r.converged]
    for line in bad:
        print(f"warning: solver did not converge: {line}", file=sys.stderr)
    if bad and args.strict:
        raise NumericalFailure("non-convergence: " + "; ".join(bad))


def cmd_simulate(args) -> list[ScenarioResult]:
    results, files = [], []
    for cfg in _scenarios(args):
        params, fit = _params(cfg, args)
        horizon = cfg.simulate.horizon
        steps = args.steps or cfg.simulate.steps
        grid = TimeGrid(0.0, horizon, steps) if steps else TimeGrid.with_step(horizon)
        traj = integrate(sir_system(params), cfg.ic.state(), grid)
        files.append(emit_trajectory(traj, args.out / f"{cfg.name}_simulate.csv", stride=args.stride))
        final = traj.final()
        results.append(
            ScenarioResult(
                name=cfg.name,
                params=params,
                horizon=horizon,
                uncontrolled=_cost_of(final),
                contagion_free_time=time_to_contagion_free(traj, cfg.simulate.threshold),
                fit_residual=fit.residual_norm if fit else None,
            )
        )
    emit_plot_script(files, args.out / "plot_simulate.py")
    return results


def _cost_of(final):
    return Cost(float(final[1]), float(final[1]), 0.0)


def cmd_optimize(args) -> list[ScenarioResult]:
    results, files = [], []
    for cfg in _scenarios(args):
        params, fit = _params(cfg, args)
        spec = cfg.ocp_spec(params)
        if args.steps:
            spec = spec.replace(step=spec.horizon / args.steps)
        base = uncontrolled(spec)
        reports = []
        if cfg.optimize is None or cfg.optimize.enabled:
            reports = [solve(spec, m) for m in _methods(cfg, args)]
        else:
            print(f"{cfg.name}: optimization disabled in the config; reporting u = 0 only", file=sys.stderr)
        _check(reports, args)
        free = integrate(sir_system(params), cfg.ic.state(), spec.grid)
        files.append(emit_trajectory(free, args.out / f"{cfg.name}_uncontrolled.csv", stride=args.stride))
        for rep in reports:
            path = args.out / f"{cfg.name}_{rep.method}.csv"
            files.append(emit_trajectory(rep.trajectory, path, stride=args.stride))
        results.append(
            ScenarioResult(
                name=cfg.name,
                params=params,
                horizon=spec.horizon,
                uncontrolled=base,
                solves=tuple(reports),
                fit_residual=fit.residual_norm if fit else None,
            )
        )
    emit_plot_script(files, args.out / "plot_optimize.py")
    return results


def cmd_calibrate(args) -> None:
    report = {}
    for cfg in _scenarios(args):
        if cfg.targets is None:
            raise UsageError(f"{cfg.name}: the config has no [calibrate] section")
        params, fit = _params(cfg, args)
        print(f"[{cfg.name}]")
        print(fit.describe())
        report[cfg.name] = {
            "beta": params.beta,
            "gamma": params.gamma,
            "population": params.population,
            "residual_norm": fit.residual_norm,
            "success": fit.success,
            "unique": fit.unique,
            "determined": fit.determined,
            "evaluations": fit.evaluations,
            "targets": [str(t) for t in fit.targets.targets],
            "residuals": list(fit.residuals),
            "alternatives": [[a.beta, a.gamma] for a in fit.alternatives],
        }
    write_text(args.out / "calibration.json", json.dumps(report, indent=2, sort_keys=True) + "\n")


def cmd_sweep(args) -> list[ScenarioResult]:
    results = []
    for cfg in _scenarios(args):
        weights = args.weights or (cfg.sweep.weights if cfg.sweep else None)
        if not weights:
            raise UsageError(f"{cfg.name}: no weights; add a [sweep] section or pass --weights")
        params, fit = _params(cfg, args)
        spec = cfg.ocp_spec(params, horizon=cfg.sweep.horizon if cfg.sweep else None)
        if args.steps:
            spec = spec.replace(step=spec.horizon / args.steps)
        if args.solver in (FBSM, DIRECT):
            method = args.solver
        elif args.solver == "both":
            raise UsageError("sweep-b runs one solver; choose fbsm or direct")
        else:
            method = cfg.sweep.solver if cfg.sweep else DIRECT
        reports = sweep_weight(spec, weights, method, workers=args.workers)
        _check(reports, args)
        files, sweep = [], {}
        for rep in reports:
            path = args.out / f"{cfg.name}_{method}_b{rep.weight:g}.csv"
            files.append(emit_trajectory(rep.trajectory, path, stride=args.stride))
            sweep[f"b = {rep.weight:g}"] = path
        emit_plot_script(files, args.out / f"plot_sweep_{cfg.name}.py", sweep=sweep)
        results.append(
            ScenarioResult(
                name=cfg.name,
                params=params,
                horizon=spec.horizon,
                uncontrolled=uncontrolled(spec),
                solves=tuple(reports),
                fit_residual=fit.residual_norm if fit else None,
            )
        )
    return results


COMMANDS = {"simulate": cmd_simulate, "optimize": cmd_optimize, "calibrate": cmd_calibrate, "sweep-b": cmd_sweep}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = (logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        results = COMMANDS[args.command](args)
        if results:
            table, _ = emit_summary(results, args.out, stem=f"summary_{args.command}")
            print(table, end="")
    except (ConfigError, DomainError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (IntegrationError, NumericalFailure) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
