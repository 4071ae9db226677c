"""Linear and nonlinear non-Markovian quantum state diffusion.

With the exact O-operator ``O(t) = F(t) L`` the linear equation reads
``d psi/dt = (-iH + z*_t L - F(t) L^dag L) psi`` and its ensemble mean of
``|psi><psi|`` solves the master equation. The nonlinear (normalised)
equation uses the shifted noise
``z~*_t = z*_t + int_0^t alpha*(t-s) <L^dag>_s ds``.

Trajectories are integrated in fixed-size batches with RK4, treating the
noise (and its shift) as constant over each step. Every trajectory draws its
noise from its own stream keyed by ``(seed, index)``, and all sums are
accumulated per block of indices in index order, so results do not depend on
the number of workers.
"""

from __future__ import annotations

import concurrent.futures as cf
import csv
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .bath import CorrelationKernel, NoiseRealization, sample_noise
from .coefficients import CoefficientTrajectory
from .control import Constant, ControlSchedule
from .exceptions import ConfigurationError, RunError
from .grid import MAX_STEP_RATE, TimeGrid, rk4_stage_times, span_steps
from .hilbert import TruncationSpec, leakage
from .observables import log_negativity_fock

NORM_FLOOR = 1e-12
FAILURE_LIMIT = 0.01
MAX_ATTEMPTS = 4
CHUNK = 250
BLOCKS = 20


@dataclass
class TrajectoryState:
    psi: np.ndarray
    t: float
    noise: NoiseRealization
    mean_L_history: list = field(default_factory=list)  # <L^dag>_s on the grid (nonlinear only)


def linear_qsd_rhs(psi, z_star, F: complex, H, L):
    """``(-iH + z* L - F L^dag L) psi`` for one ket or a ``(K, d)`` batch."""
    psi = np.asarray(psi)
    LdL = L.conj().T @ L
    if psi.ndim == 1:
        return -1j * (H @ psi) + z_star * (L @ psi) - F * (LdL @ psi)
    z = np.asarray(z_star)[:, None] if np.ndim(z_star) else z_star
    return -1j * (psi @ H.T) + z * (psi @ L.T) - F * (psi @ LdL.T)


def nonlinear_qsd_rhs(psi, z_tilde_star, F: complex, H, L):
    """``[-iH + (L - <L>) z~* - F (L^dag - <L^dag>) L + F <(L^dag - <L^dag>) L>] psi``.

    Expectations use the normalised state, so an unnormalised ``psi`` is
    simply carried along with its norm.
    """
    psi = np.asarray(psi)
    single = psi.ndim == 1
    P = psi[None] if single else psi
    z = np.atleast_1d(np.asarray(z_tilde_star))[:, None] if np.ndim(z_tilde_star) else z_tilde_star
    out = _nonlinear_batch(P, z, F, -1j * H.T, L.T, (L.conj().T @ L).T)
    return out[0] if single else out


def _nonlinear_batch(P, z, F, mHT, LT, LdLT):
    LP = P @ LT
    norm2 = np.einsum("kd,kd->k", P.conj(), P).real
    mean_L = np.einsum("kd,kd->k", P.conj(), LP) / norm2
    mean_LdL = np.einsum("kd,kd->k", LP.conj(), LP).real / norm2
    mL = mean_L[:, None]
    fluct = (mean_LdL - np.abs(mean_L) ** 2)[:, None]
    return (
        P @ mHT
        + z * (LP - mL * P)
        - F * (P @ LdLT)
        + F * np.conj(mL) * LP
        + F * fluct * P
    )


def shifted_noise(noise: NoiseRealization, mean_L_history, kernel: CorrelationKernel, t: float) -> complex:
    """``z*_t + int_0^t alpha*(t - s) <L^dag>_s ds`` by the trapezoidal rule on the noise grid."""
    dt = noise.grid.dt
    j = int(round(t / dt))
    if abs(j * dt - t) > 1e-9 * max(1.0, abs(t)) or j > noise.grid.n:
        raise ConfigurationError(f"t={t} is not on the noise grid", "t")
    hist = np.asarray(mean_L_history, dtype=complex)
    if len(hist) < j + 1:
        raise ConfigurationError("history does not cover [0, t]", "mean_L_history")
    if j == 0:
        return complex(noise.values[0])
    alpha_c = np.conj(kernel.values[j::-1])  # alpha*(t_j - t_i), i = 0..j
    w = np.ones(j + 1)
    w[0] = w[-1] = 0.5
    return complex(noise.values[j] + dt * np.sum(w * alpha_c * hist[: j + 1]))


class _ShiftAccumulator:
    """Trapezoidal memory integral ``int_0^{t_j} alpha*(t_j - s) g_s ds`` for a batch."""

    def __init__(self, kernel: CorrelationKernel, K: int, n: int):
        self.dt = kernel.grid.dt
        self.values = np.conj(np.asarray(kernel.values))
        self.exponential = kernel.is_exponential
        if self.exponential:
            self.decay = math.exp(-kernel.spec.gamma_env * self.dt)
            self.c = self.values[0]
            self.tail = np.zeros(K, dtype=complex)
        else:
            self.history = np.zeros((n + 1, K), dtype=complex)
        self.j = 0

    def push(self, g: np.ndarray) -> np.ndarray:
        """Record ``g = <L^dag>`` at the current grid point and return the shift there."""
        j, dt = self.j, self.dt
        self.j += 1
        if self.exponential:
            shift = np.zeros_like(g) if j == 0 else self.tail + 0.5 * dt * self.c * g
            weight = 0.5 if j == 0 else 1.0
            self.tail = self.decay * (self.tail + weight * dt * self.c * g)
            return shift
        self.history[j] = g
        if j == 0:
            return np.zeros_like(g)
        w = np.ones(j + 1)
        w[0] = w[-1] = 0.5
        return dt * ((w * self.values[j::-1]) @ self.history[: j + 1])


@dataclass(frozen=True, eq=False)
class QSDProblem:
    """Everything a batch of trajectories needs, shared read-only by workers.

    ``kernel`` lives on the integration grid ``(dt, n)``; ``coefficient`` may
    be finer (``dt/2`` puts the RK4 midpoints on grid points).
    """

    psi0: np.ndarray
    Omega: float
    coefficient: CoefficientTrajectory
    kernel: CorrelationKernel
    t_end: float
    dt: float
    schedule: ControlSchedule = field(default_factory=lambda: Constant(0.0))
    nonlinear: bool = False
    stride: int = 1
    zero_noise: bool = False

    def __post_init__(self):
        psi0 = np.array(self.psi0, dtype=complex)
        local = math.isqrt(psi0.size)
        if psi0.ndim != 1 or local * local != psi0.size:
            raise ConfigurationError("expected a ket on a two-mode space", "psi0")
        object.__setattr__(self, "psi0", psi0 / np.linalg.norm(psi0))
        _, n = span_steps((0.0, self.t_end), self.dt)
        if self.kernel.grid.n < n or not math.isclose(self.kernel.grid.dt, self.dt, rel_tol=1e-12):
            raise ConfigurationError("kernel must be sampled on the integration grid", "kernel")
        if self.coefficient.grid.t_end < self.t_end * (1 - 1e-12):
            raise ConfigurationError("coefficient grid ends before t_end", "coefficient")
        if self.stride < 1:
            raise ConfigurationError("must be >= 1", "stride")

    @property
    def trunc(self) -> TruncationSpec:
        return TruncationSpec(math.isqrt(self.psi0.size) - 1)

    @property
    def steps(self) -> int:
        return span_steps((0.0, self.t_end), self.dt)[1]

    def snapshot_steps(self) -> np.ndarray:
        n = self.steps
        return np.array(sorted(set(range(0, n + 1, self.stride)) | {n}))


@dataclass
class _ChunkResult:
    block_sums: dict  # block -> (n_snap, d, d)
    block_counts: dict
    sq_norms: np.ndarray  # sum over trajectories of ||P||_F^2 per snapshot
    failures: int
    max_norm_drift: float
    max_leakage: float


def _noise_matrix(problem: QSDProblem, kernel: CorrelationKernel, indices, seed, attempts):
    n = problem.steps
    if problem.zero_noise:
        return np.zeros((len(indices), n + 1), dtype=complex)
    return np.array(
        [sample_noise(kernel, seed, i, a).values[: n + 1] for i, a in zip(indices, attempts)]
    )


def _integrate_batch(problem: QSDProblem, Z: np.ndarray, debug_rows=None):
    """Integrate a batch; returns snapshots ``(K, n_snap, d)``, failed mask, norm drift and debug records."""
    trunc = problem.trunc
    ops = trunc.operators
    n, dt = problem.steps, problem.dt
    K, d = Z.shape[0], trunc.dim
    stages = rk4_stage_times(0.0, dt, n)
    flat = stages.ravel()
    F = np.atleast_1d(problem.coefficient.at(flat)).reshape(stages.shape) if n else np.zeros((0, 3), complex)
    kt = np.asarray(problem.schedule(flat), dtype=float).reshape(stages.shape) if n else np.zeros((0, 3))

    L = ops.lindblad
    LdL = L.conj().T @ L
    rate = np.abs(F) * np.linalg.norm(LdL, 2) * dt
    if rate.size and rate.max() > MAX_STEP_RATE:
        j = int(np.argmax(rate.max(axis=1) > MAX_STEP_RATE))
        raise RunError(
            f"coefficient too large for dt={dt:g} near t={stages[j, 0]:g}; F has a pole there",
            {"reason": "stiffness", "time": float(stages[j, 0])},
        )
    H0T = (problem.Omega * (ops.n1 + ops.n2)).T
    CT = ops.control.T
    LT, LdLT = L.T, LdL.T

    psi = np.tile(problem.psi0, (K, 1))
    snaps = problem.snapshot_steps()
    out = np.empty((K, len(snaps), d), dtype=complex)
    out[:, 0] = psi
    next_snap = 1
    drift = np.zeros(K)
    shift = _ShiftAccumulator(problem.kernel, K, n) if problem.nonlinear else None
    debug = [] if debug_rows is not None else None

    def record_debug(j, psi):
        if debug is None:
            return
        P = psi[debug_rows]
        norm2 = np.einsum("kd,kd->k", P.conj(), P).real
        mean_L = np.einsum("kd,kd->k", P.conj(), P @ LT) / norm2
        debug.append((j * dt, mean_L, np.sqrt(norm2)))

    record_debug(0, psi)
    with np.errstate(over="ignore", invalid="ignore"):
        for j in range(n):
            z = Z[:, j]
            if problem.nonlinear:
                norm2 = np.einsum("kd,kd->k", psi.conj(), psi).real
                g = np.conj(np.einsum("kd,kd->k", psi.conj(), psi @ LT)) / norm2  # <L^dag>
                z = (z + shift.push(g))[:, None]

                def rhs(P, Fv, kv):
                    mHT = -1j * (H0T + kv * CT)
                    return _nonlinear_batch(P, z, Fv, mHT, LT, LdLT)

            else:
                zc = z[:, None]

                def rhs(P, Fv, kv):
                    GT = -1j * (H0T + kv * CT) - Fv * LdLT
                    return P @ GT + zc * (P @ LT)

            f0, fm, f1 = F[j]
            k0, km, k1 = kt[j]
            s1 = rhs(psi, f0, k0)
            s2 = rhs(psi + 0.5 * dt * s1, fm, km)
            s3 = rhs(psi + 0.5 * dt * s2, fm, km)
            s4 = rhs(psi + dt * s3, f1, k1)
            psi = psi + (dt / 6.0) * (s1 + 2.0 * s2 + 2.0 * s3 + s4)
            if problem.nonlinear:
                norms = np.sqrt(np.einsum("kd,kd->k", psi.conj(), psi).real)
                drift = np.fmax(drift, np.abs(norms - 1.0))
            if next_snap < len(snaps) and snaps[next_snap] == j + 1:
                out[:, next_snap] = psi
                next_snap += 1
                record_debug(j + 1, psi)
    norms = np.linalg.norm(out, axis=2)
    failed = ~np.all(np.isfinite(out), axis=(1, 2)) | np.any(norms < NORM_FLOOR, axis=1)
    if problem.nonlinear:
        failed |= ~np.isfinite(drift)
    return out, failed, drift, debug


def _block_of(index: int, count: int, blocks: int) -> int:
    return index * blocks // count


def _run_chunk(args) -> _ChunkResult:
    problem, start, stop, count, seed, blocks, debug_dir = args
    indices = np.arange(start, stop)
    attempts = np.zeros(len(indices), dtype=int)
    kernel = problem.kernel
    Z = _noise_matrix(problem, kernel, indices, seed, attempts)
    debug_rows = None
    if debug_dir is not None:
        debug_rows = np.flatnonzero(indices < DEBUG_TRAJECTORIES)
        debug_rows = debug_rows if debug_rows.size else None
    out, failed, drift, debug = _integrate_batch(problem, Z, debug_rows)
    failures = int(failed.sum())
    attempt = 0
    while failed.any():
        attempt += 1
        rows = np.flatnonzero(failed)
        if attempt >= MAX_ATTEMPTS:
            raise RunError(
                f"trajectories {indices[rows].tolist()[:5]} failed {MAX_ATTEMPTS} times",
                {"reason": "repeated trajectory failure", "failures": failures},
            )
        Zr = _noise_matrix(problem, kernel, indices[rows], seed, [attempt] * len(rows))
        o2, f2, d2, _ = _integrate_batch(problem, Zr)
        out[rows], drift[rows] = o2, d2
        failed = np.zeros_like(failed)
        failed[rows] = f2
        failures += int(f2.sum())
    if debug is not None:
        _write_debug(debug_dir, indices[debug_rows], debug)

    if problem.nonlinear:
        out = out / np.linalg.norm(out, axis=2, keepdims=True)
    sq = np.sum(np.linalg.norm(out, axis=2) ** 4, axis=0)
    block_ids = np.array([_block_of(i, count, blocks) for i in indices])
    block_sums, block_counts = {}, {}
    for b in np.unique(block_ids):
        rows = out[block_ids == b]
        block_sums[int(b)] = np.einsum("ksi,ksj->sij", rows, rows.conj())
        block_counts[int(b)] = int(rows.shape[0])
    leak = max(leakage(s, problem.trunc) for s in out[:, -1])
    return _ChunkResult(block_sums, block_counts, sq, failures, float(drift.max()), float(leak))


DEBUG_TRAJECTORIES = 10


def _write_debug(debug_dir, indices, records):
    Path(debug_dir).mkdir(parents=True, exist_ok=True)
    for r, idx in enumerate(indices):
        with open(Path(debug_dir) / f"trajectory_{int(idx):06d}.csv", "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["t", "re_L", "im_L", "norm"])
            for t, mean_L, norm in records:
                writer.writerow([repr(float(t)), repr(float(mean_L[r].real)), repr(float(mean_L[r].imag)), repr(float(norm[r]))])


@dataclass(frozen=True, eq=False)
class EnsembleResult:
    """Ensemble mean with statistical errors.

    ``standard_error[s]`` estimates ``E ||rho_mean - rho||_F`` at snapshot
    ``s``; for a sample mean the jackknife estimate reduces to
    ``sqrt((sum ||P_k||_F^2 - K ||rho_mean||_F^2) / (K (K - 1)))``.
    ``block_means`` hold the means over ``BLOCKS`` contiguous index blocks
    for jackknife errors of nonlinear functionals such as E_N.
    """

    times: np.ndarray
    rho_mean: np.ndarray
    count: int
    standard_error: np.ndarray
    block_means: np.ndarray
    block_counts: np.ndarray
    failures: int
    max_norm_drift: float
    max_leakage: float
    nonlinear: bool

    def normalized(self) -> np.ndarray:
        tr = np.einsum("sii->s", self.rho_mean).real
        return self.rho_mean / tr[:, None, None]

    def log_negativity(self) -> np.ndarray:
        return np.array([log_negativity_fock(r) for r in self.normalized()])

    def log_negativity_bias(self) -> np.ndarray:
        """Estimated finite-ensemble bias of the plug-in E_N.

        The partial transpose of a nearly pure state has eigenvalues close to
        zero; Monte Carlo noise of size ``~1/sqrt(K)`` pushes some of them
        negative, which biases ``E_N(rho_mean)`` upwards by an amount that
        scales like ``1/sqrt(K)``. Each block mean carries ``sqrt(B)`` times
        that bias, so ``(mean_b E_N(block_b) - E_N(rho_mean)) / (sqrt(B) - 1)``
        estimates the bias of the full-ensemble value.
        """
        B = len(self.block_counts)
        if B < 2:
            return np.full(len(self.times), np.nan)
        full = self.log_negativity()
        per_block = np.empty((B, len(self.times)))
        for b in range(B):
            tr = np.einsum("sii->s", self.block_means[b]).real
            per_block[b] = [log_negativity_fock(r / t) for r, t in zip(self.block_means[b], tr)]
        return (per_block.mean(axis=0) - full) / (math.sqrt(B) - 1.0)

    def log_negativity_se(self) -> np.ndarray:
        """Delete-one-block jackknife standard error of E_N at each snapshot."""
        B = len(self.block_counts)
        if B < 2:
            return np.full(len(self.times), np.nan)
        total = self.block_means * self.block_counts[:, None, None, None]
        whole = total.sum(axis=0)
        reps = np.empty((B, len(self.times)))
        for b in range(B):
            rest = (whole - total[b]) / (self.count - self.block_counts[b])
            tr = np.einsum("sii->s", rest).real
            reps[b] = [log_negativity_fock(r / t) for r, t in zip(rest, tr)]
        return np.sqrt((B - 1) / B * np.sum((reps - reps.mean(axis=0)) ** 2, axis=0))


def _resolve_workers(workers: int) -> int:
    if workers is None or workers == 0:
        return os.cpu_count() or 1
    if workers < 0:
        raise ConfigurationError("must be >= 0", "workers")
    return workers


def simulate_ensemble(
    problem: QSDProblem,
    count: int,
    seed: int,
    workers: int = 1,
    blocks: int = BLOCKS,
    debug_dir=None,
) -> EnsembleResult:
    """Integrate ``count`` trajectories and average their projectors.

    Raises:
        RunError: more than 1% of trajectories failed (norm below 1e-12 or
            non-finite), or F is too close to a pole for the step size.
    """
    if count < 1:
        raise ConfigurationError("must be >= 1", "count")
    blocks = max(1, min(blocks, count))
    tasks = [
        (problem, s, min(s + CHUNK, count), count, int(seed), blocks, debug_dir)
        for s in range(0, count, CHUNK)
    ]
    workers = min(_resolve_workers(workers), len(tasks))
    if workers > 1:
        with cf.ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_chunk, tasks))
    else:
        results = [_run_chunk(t) for t in tasks]

    d = problem.trunc.dim
    n_snap = len(problem.snapshot_steps())
    block_sums = np.zeros((blocks, n_snap, d, d), dtype=complex)
    block_counts = np.zeros(blocks, dtype=int)
    sq = np.zeros(n_snap)
    failures = 0
    # fixed reduction order: chunks by index, then blocks
    for res in results:
        for b, s in res.block_sums.items():
            block_sums[b] += s
            block_counts[b] += res.block_counts[b]
        sq += res.sq_norms
        failures += res.failures
    if failures > FAILURE_LIMIT * count:
        raise RunError(
            f"{failures} of {count} trajectories failed (limit {FAILURE_LIMIT:.0%})",
            {"reason": "trajectory failures", "failures": failures, "count": count},
        )
    total = block_sums.sum(axis=0)
    rho_mean = total / count
    rho_mean = 0.5 * (rho_mean + np.conj(np.swapaxes(rho_mean, 1, 2)))
    if count > 1:
        frob2 = np.sum(np.abs(rho_mean) ** 2, axis=(1, 2))
        se = np.sqrt(np.clip(sq - count * frob2, 0.0, None) / (count * (count - 1)))
    else:
        se = np.full(n_snap, np.nan)
    block_means = block_sums / block_counts[:, None, None, None]
    times = problem.dt * problem.snapshot_steps()
    return EnsembleResult(
        times=times,
        rho_mean=rho_mean,
        count=count,
        standard_error=se,
        block_means=block_means,
        block_counts=block_counts,
        failures=failures,
        max_norm_drift=max(r.max_norm_drift for r in results),
        max_leakage=max(r.max_leakage for r in results),
        nonlinear=problem.nonlinear,
    )


def run_ensemble(config, workers: Optional[int] = None, debug_dir=None) -> EnsembleResult:
    """Build the QSD problem described by an experiment configuration and run it."""
    from .runner import qsd_problem

    problem = qsd_problem(config)
    ens = config.ensemble
    return simulate_ensemble(
        problem,
        ens.count,
        ens.seed,
        workers=ens.workers if workers is None else workers,
        debug_dir=debug_dir,
    )


@dataclass(frozen=True)
class GeneratorCheck:
    """Short-time test of the ensemble generator against a master-equation RHS."""

    residual_norm: float  # ||mean_k D_k||_F
    standard_error: float  # Monte Carlo error of that mean, Frobenius
    t0: float
    dt: float
    count: int

    @property
    def z(self) -> float:
        return self.residual_norm / self.standard_error


def generator_check(
    problem: QSDProblem, t0: float, count: int, seed: int, hamiltonian_sign: int = -1
) -> GeneratorCheck:
    """Compare the linear-ensemble derivative at ``t0`` with ``me_rhs``.

    Each trajectory contributes
    ``D_k = (P_k(t0+dt) - P_k(t0))/dt - (R(P_k(t0)) + R(P_k(t0+dt)))/2``
    with ``P = |psi><psi|`` and ``R`` the master-equation right-hand side
    (trapezoid in time, so the bias is O(dt^2)). The mean of ``D_k`` vanishes
    exactly when ``R`` generates the ensemble dynamics; ``hamiltonian_sign``
    selects the sign of the commutator term in ``R``.
    """
    from .master import me_rhs

    if problem.nonlinear:
        raise ConfigurationError("the generator check uses the linear solver", "nonlinear")
    j0 = int(round(t0 / problem.dt))
    if not math.isclose(j0 * problem.dt, t0, rel_tol=1e-9, abs_tol=1e-12):
        raise ConfigurationError("t0 must lie on the integration grid", "t0")
    prob = QSDProblem(
        problem.psi0, problem.Omega, problem.coefficient, problem.kernel,
        (j0 + 1) * problem.dt, problem.dt, problem.schedule, stride=max(j0, 1),
        zero_noise=problem.zero_noise,
    )
    Z = _noise_matrix(prob, prob.kernel, np.arange(count), seed, np.zeros(count, dtype=int))
    out, failed, _, _ = _integrate_batch(prob, Z)
    if failed.any():
        raise RunError("trajectory failure during the generator check", {"failures": int(failed.sum())})
    trunc, dt = prob.trunc, prob.dt
    t1 = t0 + dt
    F0, F1 = np.atleast_1d(prob.coefficient.at(np.array([t0, t1])))
    k0, k1 = float(prob.schedule(t0)), float(prob.schedule(t1))
    residuals = np.empty((count, trunc.dim, trunc.dim), dtype=complex)
    for i in range(count):
        P0 = np.outer(out[i, -2], out[i, -2].conj())
        P1 = np.outer(out[i, -1], out[i, -1].conj())
        R0 = me_rhs(P0, t0, F0, k0, prob.Omega, trunc, hamiltonian_sign)
        R1 = me_rhs(P1, t1, F1, k1, prob.Omega, trunc, hamiltonian_sign)
        residuals[i] = (P1 - P0) / dt - 0.5 * (R0 + R1)
    mean = residuals.mean(axis=0)
    spread = np.sum(np.abs(residuals - mean) ** 2) / (count * (count - 1))
    return GeneratorCheck(float(np.linalg.norm(mean)), float(np.sqrt(spread)), t0, dt, count)
