"""Command-line driver.

Exit codes: 0 success, 1 run aborted or failed, 2 usage or validation error.
Run directories go to ``--out-dir`` when given; otherwise to
``$QBMSIM_OUTPUT_ROOT`` (or the config's ``output.directory``) under a name
derived from the subcommand and a hash of the resolved configuration, so
identical invocations land in the same place.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .bath import write_kernel_csv
from .config import ExperimentConfig, load_config
from .control import Sinusoid, sweep_drive_frequency, write_sweep_csv
from .exceptions import ConfigurationError, QBMError, RunError
from .hilbert import TruncationSpec
from .master import integrate_master, write_rho_dump
from .observables import log_negativity_fock, trace_distance
from .qsd import simulate_ensemble
from .runner import (
    TimeSeries,
    build_coefficient,
    build_kernel,
    fock_observables,
    gaussian_observables,
    gaussian_series,
    integration_grid,
    master_run,
    qsd_problem,
)

OUTPUT_ROOT_ENV = "QBMSIM_OUTPUT_ROOT"
log = logging.getLogger("qbmsim")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def _add_global(parser, suppress: bool):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", metavar="PATH", default=default, help="experiment JSON file")
    parser.add_argument("--out-dir", metavar="PATH", default=default, help="run directory")
    parser.add_argument("--seed", type=int, metavar="U64", default=default)
    parser.add_argument("--trajectories", type=int, metavar="N", default=default)
    parser.add_argument("--workers", type=int, metavar="N", default=default, help="0 = all cores")
    parser.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS if suppress else False)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qbmsim", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"qbmsim {__version__}")
    _add_global(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        _add_global(p, suppress=True)
        return p

    add("run-master", "integrate the master equation")
    p = add("run-qsd", "average a quantum-state-diffusion ensemble")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--linear", dest="nonlinear", action="store_false", default=False)
    mode.add_argument("--nonlinear", dest="nonlinear", action="store_true")
    p.add_argument("--debug-trajectories", action="store_true", help="dump <L> and norm of the first trajectories")
    add("run-gaussian", "propagate the covariance matrix")
    p = add("compare", "master equation against a QSD ensemble")
    p.add_argument("--nonlinear", action="store_true")
    p = add("sweep", "scan the drive frequency of a sinusoidal control")
    p.add_argument("--freqs", metavar="F1,F2,...", help="overrides sweep.freqs from the config")
    return parser


def _resolve_config(args) -> ExperimentConfig:
    if not args.config:
        raise ConfigurationError("a configuration file is required", "--config")
    config = load_config(args.config)
    ens = config.ensemble
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.trajectories is not None:
        overrides["count"] = args.trajectories
    if args.workers is not None:
        overrides["workers"] = args.workers
    if overrides:
        config = replace(config, ensemble=type(ens)(**{**ens.__dict__, **overrides}))
    return config


def _run_dir(args, config: ExperimentConfig) -> Path:
    if args.out_dir:
        return Path(args.out_dir)
    root = os.environ.get(OUTPUT_ROOT_ENV) or config.output.directory
    digest = hashlib.sha256((args.command + config.dumps()).encode()).hexdigest()[:12]
    return Path(root) / f"{args.command}-{digest}"


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (complex, np.complexfloating)):
        return [float(value.real), float(value.imag)]
    if isinstance(value, np.generic):
        return value.item()
    return value


PLOT_TEMPLATE = """\
# gnuplot script: gnuplot {name}
set datafile separator ','
set terminal pngcairo size 1000,700
set output '{stem}.png'
set key autotitle columnhead
set xlabel 't'
set multiplot layout 2,2
{plots}
unset multiplot
"""


def _write_plot(directory: Path, csv_name: str, columns) -> None:
    stem = Path(csv_name).stem
    plots = "\n".join(
        f"plot '{csv_name}' using 1:{i} with lines" for i in columns
    )
    (directory / f"plot_{stem}.gp").write_text(
        PLOT_TEMPLATE.format(name=f"plot_{stem}.gp", stem=stem, plots=plots)
    )


def _cmd_master(config, run_dir, manifest, args):
    config = replace(config, solver=replace(config.solver, method="master"))
    coefficient = build_coefficient(config)
    out = integrate_master(master_run(config, coefficient))
    series = fock_observables(out.times, out.states, out.F, config.control, config.system.Omega, TruncationSpec(config.system.levels))
    series.write_csv(run_dir / "observables.csv")
    if config.output.rho_dump:
        write_rho_dump(run_dir / "rho.bin", out.states)
    manifest.update(solver="master", max_leakage=out.diagnostics["max_leakage"], diagnostics=out.diagnostics)
    return config, coefficient


def _cmd_qsd(config, run_dir, manifest, args):
    method = "nonlinear_qsd" if args.nonlinear else "linear_qsd"
    config = replace(config, solver=replace(config.solver, method=method))
    coefficient = build_coefficient(config)
    problem = qsd_problem(config, coefficient=coefficient)
    debug = args.debug_trajectories or config.output.debug_trajectories
    ens = simulate_ensemble(
        problem, config.ensemble.count, config.ensemble.seed, config.ensemble.workers,
        debug_dir=run_dir / "trajectories" if debug else None,
    )
    F = np.atleast_1d(coefficient.at(ens.times))
    series = fock_observables(ens.times, ens.normalized(), F, config.control, config.system.Omega, problem.trunc)
    series.write_csv(run_dir / "observables.csv")
    if config.output.rho_dump:
        write_rho_dump(run_dir / "rho.bin", ens.rho_mean)
    manifest.update(
        solver=method,
        trajectories=ens.count,
        failures=ens.failures,
        max_leakage=ens.max_leakage,
        max_norm_drift=ens.max_norm_drift,
    )
    return config, coefficient


def _cmd_gaussian(config, run_dir, manifest, args):
    config = replace(config, solver=replace(config.solver, method="gaussian"))
    coefficient = build_coefficient(config)
    series = gaussian_series(config, coefficient)
    series.write_csv(run_dir / "gaussian.csv")
    gaussian_observables(series, coefficient, config.control, config.system.Omega).write_csv(run_dir / "observables.csv")
    manifest.update(solver=f"gaussian/{config.solver.gaussian_method}", diagnostics=series.diagnostics)
    return config, coefficient


def _cmd_compare(config, run_dir, manifest, args):
    coefficient = build_coefficient(config)
    out = integrate_master(master_run(config, coefficient))
    trunc = TruncationSpec(config.system.levels)
    fock_observables(out.times, out.states, out.F, config.control, config.system.Omega, trunc).write_csv(
        run_dir / "observables.csv"
    )
    problem = qsd_problem(config, nonlinear=args.nonlinear, coefficient=coefficient)
    ens = simulate_ensemble(problem, config.ensemble.count, config.ensemble.seed, config.ensemble.workers)
    TimeSeries(
        {
            "t": out.times,
            "E_N_master": [log_negativity_fock(r) for r in out.states],
            "E_N_qsd": ens.log_negativity(),
            "E_N_qsd_se": ens.log_negativity_se(),
            "trace_distance": [trace_distance(a, b) for a, b in zip(out.states, ens.rho_mean)],
            "qsd_frobenius_se": ens.standard_error,
        }
    ).write_csv(run_dir / "compare.csv")
    _write_plot(run_dir, "compare.csv", [2, 3, 5, 6])
    manifest.update(
        solver="master+" + ("nonlinear_qsd" if args.nonlinear else "linear_qsd"),
        trajectories=ens.count,
        failures=ens.failures,
        max_leakage=max(out.diagnostics["max_leakage"], ens.max_leakage),
        max_norm_drift=ens.max_norm_drift,
    )
    return config, coefficient


def _cmd_sweep(config, run_dir, manifest, args):
    if not isinstance(config.control, Sinusoid):
        raise ConfigurationError("frequency sweeps need a sinusoid schedule", "control.kind")
    if args.freqs:
        try:
            freqs = [float(f) for f in args.freqs.split(",") if f.strip()]
        except ValueError:
            raise ConfigurationError("expected comma-separated numbers", "--freqs") from None
    else:
        freqs = list(config.sweep.freqs)
    if not freqs:
        raise ConfigurationError("no drive frequencies given", "sweep.freqs")
    summaries = sweep_drive_frequency(config, freqs, workers=config.ensemble.workers)
    write_sweep_csv(summaries, run_dir / "sweep.csv")
    _write_plot(run_dir, "sweep.csv", [2, 3, 4])
    manifest.update(solver=f"sweep/{config.solver.method}", frequencies=len(freqs))
    return config, build_coefficient(config)


COMMANDS = {
    "run-master": _cmd_master,
    "run-qsd": _cmd_qsd,
    "run-gaussian": _cmd_gaussian,
    "compare": _cmd_compare,
    "sweep": _cmd_sweep,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config = _resolve_config(args)
        if args.command == "run-gaussian":
            from .runner import initial_cm

            initial_cm(config)  # reject non-Gaussian states before any work
        run_dir = _run_dir(args, config)
        run_dir.mkdir(parents=True, exist_ok=True)
    except ConfigurationError as exc:
        print(f"qbmsim: validation error: {exc}", file=sys.stderr)
        return 2

    (run_dir / "config.json").write_text(config.dumps())
    manifest = {
        "command": args.command,
        "package_version": __version__,
        "seed": config.ensemble.seed,
        "trajectories": None,
        "failures": 0,
        "max_leakage": None,
        "max_norm_drift": None,
    }
    start = time.perf_counter()
    code = 0
    try:
        log.info("running %s into %s", args.command, run_dir)
        resolved, coefficient = COMMANDS[args.command](config, run_dir, manifest, args)
        coefficient.write_csv(run_dir / "F.csv")
        write_kernel_csv(build_kernel(resolved, integration_grid(resolved)), run_dir / "kernel.csv")
        if (run_dir / "observables.csv").exists():
            _write_plot(run_dir, "observables.csv", [2, 3, 4, 5])
        manifest["status"] = "ok"
    except ConfigurationError as exc:
        manifest.update(status="invalid", error=str(exc))
        print(f"qbmsim: validation error: {exc}", file=sys.stderr)
        code = 2
    except RunError as exc:
        manifest.update(status="aborted", error=str(exc), diagnostics=exc.diagnostics)
        print(f"qbmsim: run aborted: {exc}", file=sys.stderr)
        code = 1
    except (QBMError, ArithmeticError, MemoryError) as exc:
        manifest.update(status="failed", error=f"{type(exc).__name__}: {exc}")
        print(f"qbmsim: run failed: {exc}", file=sys.stderr)
        code = 1
    manifest["wall_time_s"] = round(time.perf_counter() - start, 3)
    manifest["exit_code"] = code
    (run_dir / "manifest.json").write_text(json.dumps(_jsonable(manifest), indent=2, sort_keys=True) + "\n")
    if code == 0:
        print(run_dir)
    return code


if __name__ == "__main__":
    sys.exit(main())
