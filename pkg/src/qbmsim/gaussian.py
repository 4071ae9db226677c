"""Gaussian-state covariance matrices over ``xi = (x1, p1, x2, p2)``.

Quadratures are ``x = (a + a^dag)/sqrt 2`` and ``p = (a - a^dag)/(i sqrt 2)``,
so the vacuum has ``sigma = I/2``. The master equation is quadratic and
splits into the symmetric mode ``b = (a1 + a2)/sqrt 2``, which carries all
of the bath coupling, and the antisymmetric mode ``c = (a1 - a2)/sqrt 2``,
which carries all of the control:

* ``b`` rotates at ``Omega + 2 Im F`` and is damped at rate ``4 Re F`` towards
  its vacuum (diffusion ``2 Re F`` per quadrature);
* ``c`` is a closed oscillator with ``H = Omega (X^2 + P^2)/2 + 4 k X^2``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .control import ControlSchedule, Constant
from .coefficients import CoefficientTrajectory
from .exceptions import (
    ConfigurationError,
    DomainError,
    InvertedPotentialError,
    PhysicalityError,
    RunError,
)
from .grid import MAX_STEP_RATE, rk4_stage_times, span_steps

PHYSICALITY_TOL = 1e-9

SYMPLECTIC = np.kron(np.eye(2), np.array([[0.0, 1.0], [-1.0, 0.0]]))

# xi -> (X+, P+, X-, P-); orthogonal and its own inverse
MODE_BASIS = np.array(
    [[1, 0, 1, 0], [0, 1, 0, 1], [1, 0, -1, 0], [0, 1, 0, -1]], dtype=float
) / math.sqrt(2.0)

_PT = np.diag([1.0, 1.0, 1.0, -1.0])


def _uncertainty_floor(sigma: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(sigma + 0.5j * SYMPLECTIC).min())


@dataclass(frozen=True, eq=False)
class CovarianceMatrix:
    sigma: np.ndarray
    mean: np.ndarray = field(default_factory=lambda: np.zeros(4))

    def __post_init__(self):
        sigma = np.array(self.sigma, dtype=float)
        mean = np.array(self.mean, dtype=float)
        if sigma.shape != (4, 4) or mean.shape != (4,):
            raise ConfigurationError("expected a 4x4 sigma and a 4-vector mean", "sigma")
        if np.max(np.abs(sigma - sigma.T)) > 1e-12 * max(1.0, np.max(np.abs(sigma))):
            raise DomainError("covariance matrix is not symmetric")
        sigma = 0.5 * (sigma + sigma.T)
        sigma.setflags(write=False)
        mean.setflags(write=False)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "mean", mean)

    @classmethod
    def vacuum(cls) -> "CovarianceMatrix":
        return cls(0.5 * np.eye(4))

    def uncertainty_floor(self) -> float:
        """Smallest eigenvalue of ``sigma + (i/2) Omega_s``; physical states give >= 0."""
        return _uncertainty_floor(self.sigma)

    def is_physical(self, tol: float = PHYSICALITY_TOL) -> bool:
        return self.uncertainty_floor() >= -tol

    def blocks(self):
        """``(A, B, C)``: mode-1 block, mode-2 block and the cross block."""
        s = self.sigma
        return s[:2, :2], s[2:, 2:], s[:2, 2:]

    def in_mode_basis(self) -> np.ndarray:
        """Covariance of ``(X+, P+, X-, P-)``."""
        return MODE_BASIS @ self.sigma @ MODE_BASIS


@dataclass(frozen=True)
class ControlModeMoments:
    """Second moments of the antisymmetric mode: ``<x^2>``, ``<p^2>`` and ``<xp + px>/2``."""

    x2: float
    p2: float
    cov: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x2, self.p2, self.cov])

    def uncertainty(self) -> float:
        return self.x2 * self.p2 - self.cov**2

    @classmethod
    def from_cm(cls, cm: CovarianceMatrix) -> "ControlModeMoments":
        s = cm.in_mode_basis()
        mean = MODE_BASIS @ cm.mean
        return cls(s[2, 2] + mean[2] ** 2, s[3, 3] + mean[3] ** 2, s[2, 3] + mean[2] * mean[3])


def cm_two_mode_squeezed(r: float) -> CovarianceMatrix:
    """Covariance of ``exp(-r (a1^dag a2^dag - a1 a2)) |0, 0>``.

    With this sign ``<a1 a2> = -sinh(2r)/2``, so the cross block is
    ``sinh(2r)/2 * diag(-1, 1)``: ``x1 + x2`` and ``p1 - p2`` are the squeezed
    combinations.
    """
    c, s = 0.5 * math.cosh(2 * r), 0.5 * math.sinh(2 * r)
    sigma = np.array(
        [[c, 0, -s, 0], [0, c, 0, s], [-s, 0, c, 0], [0, s, 0, c]], dtype=float
    )
    return CovarianceMatrix(sigma)


def _as_sigma(sigma) -> np.ndarray:
    return sigma.sigma if isinstance(sigma, CovarianceMatrix) else np.asarray(sigma, dtype=float)


def _spectrum(s: np.ndarray) -> tuple[float, float]:
    mods = np.sort(np.abs(np.linalg.eigvals(1j * SYMPLECTIC @ s)))
    # eigenvalues come in +/- pairs
    return float(mods[0]), float(mods[2])


def symplectic_eigenvalues(sigma) -> tuple[float, float]:
    """Moduli of the eigenvalue pairs of ``i Omega_s sigma``, ascending.

    Accepts any symmetric positive-definite matrix, which includes partially
    transposed covariance matrices.

    Raises:
        DomainError: ``sigma`` is not symmetric positive definite.
    """
    s = _as_sigma(sigma)
    if s.shape != (4, 4) or np.max(np.abs(s - s.T)) > 1e-12 * max(1.0, np.max(np.abs(s))):
        raise DomainError("symplectic spectrum needs a symmetric 4x4 matrix")
    if np.linalg.eigvalsh(s).min() <= 0:
        raise DomainError("symplectic spectrum needs a positive-definite matrix")
    return _spectrum(s)


def partial_transpose_cm(sigma) -> np.ndarray:
    """Momentum flip ``p2 -> -p2``."""
    return _PT @ _as_sigma(sigma) @ _PT


def log_negativity_cm(sigma) -> float:
    """``max(0, -ln(2 nu_min))`` of the partially transposed covariance."""
    nu_min, _ = _spectrum(partial_transpose_cm(sigma))
    return max(0.0, -math.log(2.0 * nu_min))


def effective_frequency(k: float, Omega: float) -> float:
    """``sqrt(Omega^2 + 4k)`` for the controlled oscillator (unit mass).

    Raises:
        InvertedPotentialError: ``Omega^2 + 4k < 0``.
    """
    w2 = Omega * Omega + 4.0 * k
    if w2 < 0:
        raise InvertedPotentialError(
            f"Omega^2 + 4k = {w2:.6g} < 0: inverted control potential is not supported"
        )
    return math.sqrt(w2)


def controlled_mode_moments_rhs(m: ControlModeMoments, k: float, Omega: float) -> ControlModeMoments:
    """Time derivative of the controlled-mode moments.

    In the unit-mass position representation with ``V = Omega'^2 x^2 / 2`` and
    ``Omega'^2 = Omega^2 + 4k``:
    ``d<x^2> = 2 cov``, ``d<p^2> = -2 Omega'^2 cov``,
    ``d cov = <p^2> - Omega'^2 <x^2>``.

    Here ``k`` multiplies ``(q1 - q2)^2`` in position units; the Fock-space
    coupling ``k_f (a1 - a2 + h.c.)^2`` corresponds to ``k = 2 Omega k_f``.
    """
    w2 = effective_frequency(k, Omega) ** 2
    return ControlModeMoments(2.0 * m.cov, -2.0 * w2 * m.cov, m.p2 - w2 * m.x2)


def drift_diffusion(F: complex, k: float, Omega: float) -> tuple[np.ndarray, np.ndarray]:
    """``A`` and ``D`` in ``d sigma/dt = A sigma + sigma A^T + D``, ``d mean/dt = A mean``."""
    omega = Omega + 2.0 * F.imag
    kappa = 4.0 * F.real
    A_mode = np.zeros((4, 4))
    A_mode[:2, :2] = [[-0.5 * kappa, omega], [-omega, -0.5 * kappa]]
    A_mode[2:, 2:] = [[0.0, Omega], [-(Omega + 8.0 * k), 0.0]]
    D_mode = np.diag([0.5 * kappa, 0.5 * kappa, 0.0, 0.0])
    return MODE_BASIS @ A_mode @ MODE_BASIS, MODE_BASIS @ D_mode @ MODE_BASIS


def mean_energy_cm(cm: CovarianceMatrix, Omega: float, k: float) -> float:
    """``<Omega (n1 + n2) + 2k (x1 - x2)^2>``."""
    s, mu = cm.sigma, cm.mean
    second = np.diag(s) + mu**2
    number = 0.5 * (second.sum() - 2.0)
    diff = s[0, 0] + s[2, 2] - 2.0 * s[0, 2] + (mu[0] - mu[2]) ** 2
    return float(Omega * number + 2.0 * k * diff)


@dataclass(frozen=True, eq=False)
class CovarianceSeries:
    times: np.ndarray
    sigma: np.ndarray  # (n, 4, 4)
    mean: np.ndarray  # (n, 4)
    diagnostics: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.times)

    def __getitem__(self, i) -> CovarianceMatrix:
        return CovarianceMatrix(self.sigma[i], self.mean[i])

    def log_negativity(self) -> np.ndarray:
        return np.array([log_negativity_cm(s) for s in self.sigma])

    def write_csv(self, path) -> None:
        iu = np.triu_indices(4)
        names = [f"s{i + 1}{j + 1}" for i, j in zip(*iu)]
        EN = self.log_negativity()
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["t", *names, "E_N"])
            for t, s, en in zip(self.times, self.sigma, EN):
                writer.writerow([repr(float(t)), *(repr(float(v)) for v in s[iu]), repr(float(en))])


def propagate_cm(
    sigma0: CovarianceMatrix,
    coefficient: CoefficientTrajectory,
    schedule: Optional[ControlSchedule],
    t_span,
    dt: float,
    Omega: float = 1.0,
    stride: int = 1,
    method: str = "drift",
) -> CovarianceSeries:
    """Evolve a Gaussian state under the master equation driven by F(t).

    ``method="drift"`` integrates ``d sigma = A sigma + sigma A^T + D`` with
    classical RK4 and F interpolated linearly on the coefficient grid.
    ``method="channel"`` uses the exact solution of the symmetric mode,
    ``<b(t)> = G(t) <b(0)>`` with ``G = Y(t)/Y(0)`` the amplitude stored in the
    coefficient trajectory, and RK4 only for the closed antisymmetric mode;
    it stays valid through poles of F, where the time-local generator breaks
    down. It needs ``t_span`` to start at 0 and ``dt`` equal to the
    coefficient grid spacing.

    Raises:
        PhysicalityError: a snapshot violates the uncertainty relation.
        RunError: ``|4 Re F| dt`` exceeds the RK4 stability budget (F near a pole).
    """
    if schedule is None:
        schedule = Constant(0.0)
    t0, n = span_steps(t_span, dt)
    if stride < 1:
        raise ConfigurationError("must be >= 1", "stride")
    if not sigma0.is_physical():
        raise PhysicalityError(f"initial state violates uncertainty by {sigma0.uncertainty_floor():.3g}")
    if method == "drift":
        times, sig, mu, diag = _propagate_drift(sigma0, coefficient, schedule, t0, n, dt, Omega, stride)
    elif method == "channel":
        times, sig, mu, diag = _propagate_channel(sigma0, coefficient, schedule, t0, n, dt, Omega, stride)
    else:
        raise ConfigurationError(f"unknown method {method!r}", "method")
    floors = np.array([_uncertainty_floor(s) for s in sig])
    diag["min_uncertainty_floor"] = float(floors.min())
    bad = np.flatnonzero(floors < -PHYSICALITY_TOL)
    if bad.size:
        raise PhysicalityError(
            f"uncertainty violated by {-floors[bad[0]]:.3g} at t={times[bad[0]]:g}"
        )
    return CovarianceSeries(times, sig, mu, diag)


def _propagate_drift(sigma0, coefficient, schedule, t0, n, dt, Omega, stride):
    stages = rk4_stage_times(t0, dt, n)
    F = np.atleast_1d(coefficient.at(stages.ravel())).reshape(stages.shape) if n else np.zeros((0, 3))
    k = np.asarray(schedule(stages.ravel()), dtype=float).reshape(stages.shape) if n else F.real
    rate = 4.0 * np.abs(F.real) * dt
    if n and rate.max() > MAX_STEP_RATE:
        j = int(np.argmax(rate.max(axis=1) > MAX_STEP_RATE))
        raise RunError(
            f"coefficient too large for dt={dt:g} near t={stages[j, 0]:g} (|F|={abs(F[j]).max():.3g}); "
            "F has a pole there and the time-local generator is singular",
            {"time": float(stages[j, 0]), "F": complex(F[j, np.argmax(abs(F[j]))])},
        )

    def rhs(s, m, Fv, kv):
        A, D = drift_diffusion(Fv, kv, Omega)
        As = A @ s
        return As + As.T + D, A @ m

    s = sigma0.sigma.copy()
    m = sigma0.mean.copy()
    out_t, out_s, out_m = [t0], [s.copy()], [m.copy()]
    for j in range(n):
        k1s, k1m = rhs(s, m, F[j, 0], k[j, 0])
        k2s, k2m = rhs(s + 0.5 * dt * k1s, m + 0.5 * dt * k1m, F[j, 1], k[j, 1])
        k3s, k3m = rhs(s + 0.5 * dt * k2s, m + 0.5 * dt * k2m, F[j, 1], k[j, 1])
        k4s, k4m = rhs(s + dt * k3s, m + dt * k3m, F[j, 2], k[j, 2])
        s = s + dt / 6.0 * (k1s + 2 * k2s + 2 * k3s + k4s)
        s = 0.5 * (s + s.T)
        m = m + dt / 6.0 * (k1m + 2 * k2m + 2 * k3m + k4m)
        if (j + 1) % stride == 0 or j + 1 == n:
            out_t.append(stages[j, 2])
            out_s.append(s.copy())
            out_m.append(m.copy())
    return np.array(out_t), np.array(out_s), np.array(out_m), {"method": "drift"}


def _antisymmetric_flow(schedule, t0, n, dt, Omega) -> np.ndarray:
    """Symplectic 2x2 propagators of the antisymmetric mode at every step."""
    stages = rk4_stage_times(t0, dt, n)
    k = np.asarray(schedule(stages.ravel()), dtype=float).reshape(stages.shape) if n else np.zeros((0, 3))
    S = np.empty((n + 1, 2, 2))
    S[0] = np.eye(2)

    def A(kv):
        return np.array([[0.0, Omega], [-(Omega + 8.0 * kv), 0.0]])

    for j in range(n):
        s = S[j]
        k1 = A(k[j, 0]) @ s
        k2 = A(k[j, 1]) @ (s + 0.5 * dt * k1)
        k3 = A(k[j, 1]) @ (s + 0.5 * dt * k2)
        k4 = A(k[j, 2]) @ (s + dt * k3)
        S[j + 1] = s + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return S


def _propagate_channel(sigma0, coefficient, schedule, t0, n, dt, Omega, stride):
    if coefficient.amplitude is None:
        raise ConfigurationError("channel propagation needs the coefficient amplitude", "coefficient")
    if t0 != 0.0 or not math.isclose(coefficient.grid.dt, dt, rel_tol=1e-12):
        raise ConfigurationError("channel propagation runs on the coefficient grid from t=0", "dt")
    if n > coefficient.grid.n:
        raise ConfigurationError("time span exceeds the coefficient grid", "t_span")
    G = coefficient.amplitude[: n + 1] / coefficient.amplitude[0]
    S = _antisymmetric_flow(schedule, t0, n, dt, Omega)
    s0 = sigma0.in_mode_basis()
    m0 = MODE_BASIS @ sigma0.mean
    keep = sorted(set(range(0, n + 1, stride)) | {n})
    out_s, out_m = [], []
    for j in keep:
        g = G[j]
        M = np.zeros((4, 4))
        M[:2, :2] = [[g.real, -g.imag], [g.imag, g.real]]
        M[2:, 2:] = S[j]
        s = M @ s0 @ M.T
        s[:2, :2] += 0.5 * (1.0 - abs(g) ** 2) * np.eye(2)
        s = MODE_BASIS @ s @ MODE_BASIS
        out_s.append(0.5 * (s + s.T))
        out_m.append(MODE_BASIS @ (M @ m0))
    times = t0 + dt * np.array(keep, dtype=float)
    diag = {"method": "channel", "min_abs_G": float(np.abs(G).min())}
    return times, np.array(out_s), np.array(out_m), diag
