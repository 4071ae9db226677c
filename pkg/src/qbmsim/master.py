"""Time-local master equation driven by the memory coefficient F(t).

``d rho/dt = -i[H, rho] + [L, rho F* L^dag] + [F L rho, L^dag]`` with
``L = a1 + a2`` and ``H(t) = Omega (n1 + n2) + k(t) (a1 - a2 + a1^dag - a2^dag)^2``.
For Hermitian ``rho`` this equals ``G rho + (G rho)^dag + 2 Re F L rho L^dag``
with ``G = -iH - F L^dag L``, which the integrator uses (three products per
evaluation).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import sparse

from .coefficients import CoefficientTrajectory
from .control import Constant, ControlSchedule
from .exceptions import ConfigurationError, RunError
from .grid import MAX_STEP_RATE, rk4_stage_times, span_steps
from .hilbert import TruncationSpec, leakage, system_hamiltonian

TRACE_ABORT = 1e-6
# edge population tolerated during a run; preparation uses the stricter LEAKAGE_ERROR
RUN_LEAKAGE_LIMIT = 1e-2

SPARSE_MIN_DIM = 64

RHO_MAGIC = b"RHO1"
_HEADER = struct.Struct("<4sIQ")  # magic, d, count: 16 bytes


def _trunc_for(rho: np.ndarray) -> TruncationSpec:
    local = math.isqrt(rho.shape[0])
    if local * local != rho.shape[0] or rho.shape != (rho.shape[0],) * 2:
        raise ConfigurationError("expected a square matrix on a two-mode space", "rho")
    return TruncationSpec(local - 1)


def me_rhs(
    rho: np.ndarray,
    t: float,
    F: complex,
    k: float,
    Omega: float,
    trunc: Optional[TruncationSpec] = None,
    hamiltonian_sign: int = -1,
) -> np.ndarray:
    """Right-hand side of the master equation at one instant.

    ``t`` is carried for interface symmetry; the time dependence enters only
    through ``F`` and ``k``. ``hamiltonian_sign=+1`` gives ``+i[H, rho]``, the
    opposite convention, kept only so the two can be compared.
    """
    if hamiltonian_sign not in (-1, 1):
        raise ConfigurationError("must be -1 or +1", "hamiltonian_sign")
    if trunc is None:
        trunc = _trunc_for(rho)
    ops = trunc.operators
    H = system_hamiltonian(Omega, k, trunc)
    L = ops.lindblad
    Ld = L.conj().T
    comm = H @ rho - rho @ H
    LrLd = L @ rho @ Ld
    LdL = Ld @ L
    return (
        hamiltonian_sign * 1j * comm
        + np.conj(F) * (LrLd - rho @ LdL)
        + F * (LrLd - LdL @ rho)
    )


@dataclass(frozen=True, eq=False)
class MasterRun:
    """One fixed-step integration of the master equation.

    ``coefficient`` must cover ``t_span``; its spacing either equals ``dt``,
    is an integer multiple of it, or divides it (e.g. ``dt/2``, which puts
    the RK4 midpoints on the grid).
    """

    rho0: np.ndarray
    t_span: tuple
    dt: float
    coefficient: CoefficientTrajectory
    schedule: ControlSchedule = field(default_factory=lambda: Constant(0.0))
    Omega: float = 1.0
    stride: int = 1
    leakage_limit: float = RUN_LEAKAGE_LIMIT

    def __post_init__(self):
        rho0 = np.array(self.rho0, dtype=complex)
        _trunc_for(rho0)
        object.__setattr__(self, "rho0", rho0)
        span_steps(self.t_span, self.dt)
        if self.stride < 1:
            raise ConfigurationError("must be >= 1", "stride")
        ratio = self.coefficient.grid.dt / self.dt
        if not any(abs(r - round(r)) < 1e-9 and round(r) >= 1 for r in (ratio, 1.0 / ratio)):
            raise ConfigurationError(
                f"coefficient spacing {self.coefficient.grid.dt:g} and dt={self.dt:g} are not commensurate",
                "dt",
            )
        if self.t_span[1] > self.coefficient.grid.t_end * (1 + 1e-12):
            raise ConfigurationError("t_span ends after the coefficient grid", "t_span")

    @property
    def trunc(self) -> TruncationSpec:
        return _trunc_for(self.rho0)


@dataclass(frozen=True, eq=False)
class MasterSeries:
    times: np.ndarray
    states: np.ndarray  # (n, d, d)
    F: np.ndarray
    k: np.ndarray
    diagnostics: dict

    def __len__(self) -> int:
        return len(self.times)


def _stiffness_check(F: np.ndarray, stages: np.ndarray, LdL_norm: float, dt: float) -> None:
    rate = np.abs(F) * LdL_norm * dt
    if rate.size and rate.max() > MAX_STEP_RATE:
        j = int(np.argmax(rate.max(axis=1) > MAX_STEP_RATE))
        raise RunError(
            f"coefficient too large for dt={dt:g} near t={stages[j, 0]:g} "
            f"(|F|={np.abs(F[j]).max():.3g}); F has a pole there and the "
            "time-local master equation is singular",
            {"reason": "stiffness", "time": float(stages[j, 0])},
        )


def integrate_master(
    run: MasterRun, callback: Optional[Callable[[float, np.ndarray], None]] = None
) -> MasterSeries:
    """Classical RK4 with ``rho <- (rho + rho^dag)/2`` after each step.

    Snapshots every ``stride`` steps (and at the end) are returned and, if
    given, passed to ``callback(t, rho)`` as they are produced.

    Raises:
        RunError: trace drift beyond 1e-6, edge population beyond the
            truncation threshold, or F too close to a pole for the step size.
            ``diagnostics`` names the reason and time.
    """
    trunc = run.trunc
    ops = trunc.operators
    t0, n = span_steps(run.t_span, run.dt)
    dt = run.dt
    stages = rk4_stage_times(t0, dt, n)
    flat = stages.ravel()
    F = np.atleast_1d(run.coefficient.at(flat)).reshape(stages.shape) if n else np.zeros((0, 3), complex)
    k = np.asarray(run.schedule(flat), dtype=float).reshape(stages.shape) if n else np.zeros((0, 3))

    LdL = ops.lindblad.conj().T @ ops.lindblad
    _stiffness_check(F, stages, float(np.linalg.norm(LdL, 2)), dt)
    # every operator is banded in the Fock basis; sparse-dense products keep
    # large truncations cheap
    fmt = sparse.csr_array if trunc.dim >= SPARSE_MIN_DIM else np.asarray
    L = fmt(ops.lindblad)
    LdL = fmt(LdL)
    H0 = fmt(run.Omega * (ops.n1 + ops.n2))
    C = fmt(ops.control)

    def rhs(rho, Fv, kv):
        Gr = -1j * (H0 @ rho + kv * (C @ rho)) - Fv * (LdL @ rho)
        Lr = L @ rho
        # L rho L^dag = (L (L rho)^dag)^dag
        jump = (L @ Lr.conj().T).conj().T
        return Gr + Gr.conj().T + (2.0 * Fv.real) * jump

    rho = run.rho0.copy()
    tr0 = np.trace(rho).real
    diag = {"max_trace_drift": 0.0, "max_hermiticity_error": 0.0, "max_leakage": leakage(rho, trunc)}

    def abort(reason, t, value):
        diag.update(reason=reason, time=float(t), value=float(value))
        raise RunError(f"master-equation run aborted at t={t:g}: {reason} = {value:.3g}", diag)

    times, states, F_out, k_out = [t0], [rho.copy()], [run.coefficient.at(t0)], [float(run.schedule(t0))]
    if callback:
        callback(t0, rho)
    for j in range(n):
        f0, fm, f1 = F[j]
        k0, km, k1_ = k[j]
        s1 = rhs(rho, f0, k0)
        s2 = rhs(rho + 0.5 * dt * s1, fm, km)
        s3 = rhs(rho + 0.5 * dt * s2, fm, km)
        s4 = rhs(rho + dt * s3, f1, k1_)
        rho = rho + (dt / 6.0) * (s1 + 2.0 * s2 + 2.0 * s3 + s4)
        herm = np.abs(rho - rho.conj().T).max()
        diag["max_hermiticity_error"] = max(diag["max_hermiticity_error"], float(herm))
        rho = 0.5 * (rho + rho.conj().T)
        drift = abs(np.trace(rho).real - tr0)
        if not np.isfinite(drift):
            abort("non-finite state", stages[j, 2], float("nan"))
        diag["max_trace_drift"] = max(diag["max_trace_drift"], drift)
        if drift > TRACE_ABORT:
            abort("trace drift", stages[j, 2], drift)
        if (j + 1) % run.stride == 0 or j + 1 == n:
            t = stages[j, 2]
            leak = leakage(rho, trunc)
            diag["max_leakage"] = max(diag["max_leakage"], leak)
            if leak > run.leakage_limit:
                abort("truncation leakage", t, leak)
            times.append(t)
            states.append(rho.copy())
            F_out.append(f1)
            k_out.append(k1_)
            if callback:
                callback(t, rho)
    states = np.array(states)
    diag["min_eigenvalue"] = float(min(np.linalg.eigvalsh(s).min() for s in states))
    return MasterSeries(np.array(times), states, np.array(F_out, dtype=complex), np.array(k_out), diag)


def write_rho_dump(path, states) -> None:
    """Binary dump: 16-byte header (``b"RHO1"``, uint32 d, uint64 count), then
    ``count * d * d`` little-endian complex doubles in row-major order."""
    states = np.asarray(states, dtype=complex)
    if states.ndim == 2:
        states = states[None]
    count, d, _ = states.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(RHO_MAGIC, d, count))
        fh.write(states.astype("<c16").tobytes())


def read_rho_dump(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic, d, count = _HEADER.unpack(fh.read(_HEADER.size))
        if magic != RHO_MAGIC:
            raise ConfigurationError(f"not a density-matrix dump (magic {magic!r})", "path")
        data = np.frombuffer(fh.read(), dtype="<c16")
    if data.size != count * d * d:
        raise ConfigurationError("truncated density-matrix dump", "path")
    return data.reshape(count, d, d).astype(complex)
