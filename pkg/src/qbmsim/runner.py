"""Build solver inputs from an :class:`ExperimentConfig` and collect observables."""

from __future__ import annotations

import concurrent.futures as cf
import csv
import math
import os
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .bath import CorrelationKernel, KernelFamily, kernel_on_grid, read_kernel_csv
from .coefficients import CoefficientSpec, CoefficientTrajectory, analytic_trajectory, solve_F_general
from .config import ExperimentConfig
from .exceptions import ConfigurationError
from .gaussian import CovarianceMatrix, cm_two_mode_squeezed, mean_energy_cm, propagate_cm
from .grid import TimeGrid
from .hilbert import Coherent, Fock, TruncationSpec, TwoModeSqueezed, prepare_state, projector
from .master import MasterRun, integrate_master
from .observables import l1_coherence, log_negativity_fock, mean_energy, purity
from .qsd import QSDProblem

OBSERVABLE_COLUMNS = ("t", "E_N", "l1_coherence", "energy", "purity", "re_F", "im_F")


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """Named real columns over a shared, strictly increasing ``t`` column."""

    columns: dict

    def __post_init__(self):
        cols = {name: np.asarray(v, dtype=float) for name, v in self.columns.items()}
        if "t" not in cols:
            raise ConfigurationError("a time series needs a 't' column", "columns")
        n = len(cols["t"])
        if any(len(v) != n for v in cols.values()):
            raise ConfigurationError("columns must have equal lengths", "columns")
        if n > 1 and np.any(np.diff(cols["t"]) <= 0):
            raise ConfigurationError("time must be strictly increasing", "t")
        object.__setattr__(self, "columns", cols)

    def __getitem__(self, name) -> np.ndarray:
        return self.columns[name]

    def __len__(self) -> int:
        return len(self.columns["t"])

    @property
    def names(self) -> list:
        return list(self.columns)

    def write_csv(self, path) -> None:
        # repr() of a Python float is locale-independent and round-trips exactly
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(self.names)
            for row in zip(*self.columns.values()):
                writer.writerow([repr(float(v)) for v in row])


def integration_grid(config: ExperimentConfig) -> TimeGrid:
    return config.grid.grid


def build_kernel(config: ExperimentConfig, grid: TimeGrid) -> CorrelationKernel:
    if config.bath.kernel_family is KernelFamily.TABULATED:
        table = read_kernel_csv(config.kernel_csv)
        return table.restrict(grid)
    return kernel_on_grid(config.bath, grid)


def build_coefficient(config: ExperimentConfig, kernel: CorrelationKernel = None) -> CoefficientTrajectory:
    """F(t) on the half-step grid, so RK4 midpoints fall on grid points."""
    fine = integration_grid(config).refine(2)
    method = config.solver.coefficient
    Omega = config.system.Omega
    if method == "analytic":
        return analytic_trajectory(CoefficientSpec.from_bath(config.bath, Omega), fine)
    if kernel is None or kernel.grid != fine:
        kernel = build_kernel(config, fine)
    return solve_F_general(kernel, Omega, method=method)


def initial_ket(config: ExperimentConfig) -> np.ndarray:
    return prepare_state(config.initial_state, TruncationSpec(config.system.levels))


def initial_cm(config: ExperimentConfig) -> CovarianceMatrix:
    """Covariance of a Gaussian initial state.

    Raises:
        ConfigurationError: the initial state is not Gaussian.
    """
    kind = config.initial_state
    if isinstance(kind, TwoModeSqueezed):
        return cm_two_mode_squeezed(kind.r)
    if isinstance(kind, Coherent):
        mean = math.sqrt(2.0) * np.array(
            [kind.alpha1.real, kind.alpha1.imag, kind.alpha2.real, kind.alpha2.imag]
        )
        return CovarianceMatrix(0.5 * np.eye(4), mean)
    if isinstance(kind, Fock) and kind.n1 == 0 and kind.n2 == 0:
        return CovarianceMatrix.vacuum()
    raise ConfigurationError(
        f"{kind} is not a Gaussian state; the Gaussian solver accepts vacuum, "
        "coherent and two-mode squeezed initial states",
        "initial_state",
    )


def master_run(config: ExperimentConfig, coefficient: CoefficientTrajectory = None) -> MasterRun:
    if coefficient is None:
        coefficient = build_coefficient(config)
    return MasterRun(
        rho0=projector(initial_ket(config)),
        t_span=(0.0, config.grid.t_end),
        dt=config.grid.dt,
        coefficient=coefficient,
        schedule=config.control,
        Omega=config.system.Omega,
        stride=config.output.stride,
    )


def qsd_problem(config: ExperimentConfig, nonlinear: bool = None, coefficient=None) -> QSDProblem:
    if nonlinear is None:
        nonlinear = config.solver.method == "nonlinear_qsd"
    if coefficient is None:
        coefficient = build_coefficient(config)
    return QSDProblem(
        psi0=initial_ket(config),
        Omega=config.system.Omega,
        coefficient=coefficient,
        kernel=build_kernel(config, integration_grid(config)),
        t_end=config.grid.t_end,
        dt=config.grid.dt,
        schedule=config.control,
        nonlinear=nonlinear,
        stride=config.output.stride,
    )


def gaussian_series(config: ExperimentConfig, coefficient: CoefficientTrajectory = None):
    sigma0 = initial_cm(config)
    if coefficient is None:
        coefficient = build_coefficient(config)
    dt = config.grid.dt
    if config.solver.gaussian_method == "channel":
        # the exact route samples the amplitude on the integration grid
        coarse = TimeGrid(dt, integration_grid(config).n)
        coefficient = CoefficientTrajectory(
            coarse, coefficient.F_values[::2], coefficient.amplitude[::2], coefficient.method
        )
    return propagate_cm(
        sigma0,
        coefficient,
        config.control,
        (0.0, config.grid.t_end),
        dt,
        Omega=config.system.Omega,
        stride=config.output.stride,
        method=config.solver.gaussian_method,
    )


def fock_observables(times, states, F, schedule, Omega, trunc) -> TimeSeries:
    k = np.asarray(schedule(np.asarray(times)), dtype=float) * np.ones(len(times))
    return TimeSeries(
        {
            "t": times,
            "E_N": [log_negativity_fock(r) for r in states],
            "l1_coherence": [l1_coherence(r) for r in states],
            "energy": [mean_energy(r, Omega, kk, trunc) for r, kk in zip(states, k)],
            "purity": [purity(r) for r in states],
            "re_F": np.real(F),
            "im_F": np.imag(F),
        }
    )


def gaussian_observables(series, coefficient, schedule, Omega) -> TimeSeries:
    times = series.times
    k = np.asarray(schedule(times), dtype=float) * np.ones(len(times))
    F = np.atleast_1d(coefficient.at(times))
    dets = np.linalg.det(series.sigma)
    return TimeSeries(
        {
            "t": times,
            "E_N": series.log_negativity(),
            # coherence needs the Fock representation; not defined here
            "l1_coherence": np.full(len(times), np.nan),
            "energy": [mean_energy_cm(series[i], Omega, kk) for i, kk in enumerate(k)],
            "purity": 1.0 / (4.0 * np.sqrt(dets)),
            "re_F": F.real,
            "im_F": F.imag,
        }
    )


def observables_for_config(config: ExperimentConfig) -> TimeSeries:
    """Run the configured solver and reduce its output to the observable table."""
    from .qsd import simulate_ensemble

    coefficient = build_coefficient(config)
    Omega = config.system.Omega
    method = config.solver.method
    if method == "gaussian":
        return gaussian_observables(gaussian_series(config, coefficient), coefficient, config.control, Omega)
    if method == "master":
        out = integrate_master(master_run(config, coefficient))
        return fock_observables(out.times, out.states, out.F, config.control, Omega, TruncationSpec(config.system.levels))
    problem = qsd_problem(config, coefficient=coefficient)
    ens = simulate_ensemble(problem, config.ensemble.count, config.ensemble.seed, config.ensemble.workers)
    F = np.atleast_1d(coefficient.at(ens.times))
    return fock_observables(ens.times, ens.normalized(), F, config.control, Omega, problem.trunc)


def parallel_map(fn: Callable, items: Sequence, workers: int = 1) -> list:
    """``[fn(x) for x in items]``, optionally across processes; order is preserved."""
    if workers == 0:
        workers = os.cpu_count() or 1
    workers = min(workers, len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with cf.ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
