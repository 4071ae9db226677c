"""Memory coefficient F(t) of the noise-free O-operator ``O(t,s) = f(t,s) (a1 + a2)``.

``f`` obeys ``d_t f(t,s) = (i*Omega + 2F(t)) f(t,s)`` with ``f(s,s) = 1`` and
``F(t) = int_0^t alpha(t-s) f(t,s) ds``. For the exponential (Lorentzian)
kernel this closes into the Riccati equation
``dF/dt = 2F^2 - (gamma - i*Omega) F + Gamma*gamma/2`` with ``F(0) = 0``.
"""

from __future__ import annotations

import cmath
import csv
import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .bath import BathSpec, CorrelationKernel, KernelFamily
from .exceptions import ConfigurationError, ConvergenceError, DegenerateRootsError, NumericalError
from .grid import TimeGrid


class Markovianity(str, enum.Enum):
    MARKOVIAN = "markovian"
    NON_MARKOVIAN = "non_markovian"


@dataclass(frozen=True)
class CoefficientSpec:
    Gamma: float
    gamma_env: float
    Omega: float = 1.0

    def __post_init__(self):
        if not self.Gamma > 0:
            raise ConfigurationError("must be positive", "Gamma")
        if not self.gamma_env > 0:
            raise ConfigurationError("must be positive", "gamma_env")
        if not self.Omega >= 0:
            raise ConfigurationError("must be non-negative", "Omega")

    @classmethod
    def from_bath(cls, bath: BathSpec, Omega: float) -> "CoefficientSpec":
        if bath.kernel_family is not KernelFamily.LORENTZIAN:
            raise ConfigurationError("closed-form coefficients need a Lorentzian bath", "kernel_family")
        return cls(bath.Gamma, bath.gamma_env, Omega)

    @property
    def damping(self) -> complex:
        """``gamma - i*Omega``, the linear coefficient of the Riccati flow."""
        return complex(self.gamma_env, -self.Omega)

    @property
    def discriminant(self) -> complex:
        return self.damping**2 - 4.0 * self.Gamma * self.gamma_env

    def roots(self) -> tuple[complex, complex]:
        """Characteristic roots of ``y'' + (gamma - i Omega) y' + Gamma gamma y = 0``.

        Ordered so the first has the larger real part.
        """
        delta = self.discriminant
        if abs(delta) <= 1e-13 * max(1.0, abs(self.damping) ** 2):
            raise DegenerateRootsError(
                f"Delta = {delta:.3g}: coincident roots are not supported; "
                "perturb gamma_env (e.g. by 1e-9)"
            )
        sq = cmath.sqrt(delta)
        l1 = 0.5 * (-self.damping + sq)
        l2 = 0.5 * (-self.damping - sq)
        return (l1, l2) if l1.real >= l2.real else (l2, l1)


def riccati_rhs(F, spec: CoefficientSpec):
    """``2F^2 - (gamma - i Omega) F + Gamma gamma / 2``."""
    return 2.0 * F * F - spec.damping * F + 0.5 * spec.Gamma * spec.gamma_env


def riccati_fixed_points(spec: CoefficientSpec) -> tuple[complex, complex]:
    """Both stationary points of the Riccati flow, attractor first.

    A fixed point ``F*`` attracts when ``Re d(rhs)/dF = Re(4F* - (gamma - i Omega)) < 0``.
    The fixed points are ``-lambda/2``, so the attractor belongs to the root
    with the larger real part.
    """
    l1, l2 = spec.roots()
    stable, unstable = -0.5 * l1, -0.5 * l2
    slope = (4.0 * stable - spec.damping).real
    assert slope <= 0, f"attractor check failed: Re slope = {slope}"
    return stable, unstable


def _closed_form(l1: complex, l2: complex, t):
    """Closed form exactly as written in terms of the two roots."""
    e1 = np.exp(l1 * t)
    e2 = np.exp(l2 * t)
    return (-l1 * e1 + l1 * e2) / (2.0 * (e1 - (l1 / l2) * e2))


def analytic_F(spec: CoefficientSpec, t):
    """Closed-form F(t) for the Lorentzian kernel.

    Evaluated after dividing through by ``exp(lambda1 t)`` with ``lambda1`` the
    root of larger real part, which keeps every exponential bounded for large t.

    Raises:
        DegenerateRootsError: when ``Delta = 0``.
    """
    l1, l2 = spec.roots()
    t = np.asarray(t, dtype=float)
    decay = np.exp((l2 - l1) * t)
    out = -l1 * (1.0 - decay) / (2.0 * (1.0 - (l1 / l2) * decay))
    return out[()] if out.ndim == 0 else out


def classify_markovianity(spec: CoefficientSpec) -> Markovianity:
    """Non-Markovian iff ``Omega != 0`` or ``gamma^2 - 4 Gamma gamma < 0``."""
    if spec.Omega != 0 or spec.gamma_env**2 - 4.0 * spec.Gamma * spec.gamma_env < 0:
        return Markovianity.NON_MARKOVIAN
    return Markovianity.MARKOVIAN


@dataclass(frozen=True, eq=False)
class CoefficientTrajectory:
    """F on a uniform grid together with the amplitude of ``f``.

    ``amplitude[j] = Y(t_j) = exp(-int_0^{t_j} (i Omega + 2F(u)) du)`` up to a
    constant factor, so that ``f(t_j, t_i) = Y(t_i) / Y(t_j)`` and
    ``f(t_j, t_j) = 1`` exactly. ``Y`` stays finite where F has a pole.
    """

    grid: TimeGrid
    F_values: np.ndarray
    amplitude: Optional[np.ndarray] = None
    method: str = ""

    def __post_init__(self):
        for name in ("F_values", "amplitude"):
            arr = getattr(self, name)
            if arr is None:
                continue
            arr = np.array(arr, dtype=complex)
            if arr.shape != (len(self.grid),):
                raise ConfigurationError("length mismatch with grid", name)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    def at(self, t):
        """Linear interpolation of F between grid points."""
        times = self.grid.times
        t = np.asarray(t, dtype=float)
        if np.any(t < -1e-12) or np.any(t > times[-1] * (1 + 1e-12) + 1e-12):
            raise ConfigurationError(f"t outside [0, {times[-1]}]", "t")
        out = np.interp(t, times, self.F_values.real) + 1j * np.interp(t, times, self.F_values.imag)
        return out[()] if out.ndim == 0 else out

    def f(self, j: int, i: int) -> complex:
        """``f(t_j, t_i)`` for ``i <= j``."""
        if self.amplitude is None:
            raise ConfigurationError("trajectory was built without the amplitude", "amplitude")
        if not 0 <= i <= j:
            raise ConfigurationError("need 0 <= s index <= t index", "i")
        if i == j:
            return 1.0 + 0j
        return complex(self.amplitude[i] / self.amplitude[j])

    @property
    def f_history(self) -> np.ndarray:
        """Lower-triangular table ``f(t_j, t_i)`` (zeros above the diagonal); O(n^2) memory."""
        if self.amplitude is None:
            raise ConfigurationError("trajectory was built without the amplitude", "amplitude")
        Y = self.amplitude
        with np.errstate(divide="ignore", invalid="ignore"):
            table = Y[None, :] / Y[:, None]
        return np.tril(table)

    def singular_times(self) -> np.ndarray:
        """Grid times bracketing a zero of the amplitude, i.e. a pole of F.

        A pole sits between ``t_j`` and ``t_{j+1}`` when the amplitude turns by
        more than a right angle across the step; for real amplitudes this is a
        sign change.
        """
        if self.amplitude is None:
            raise ConfigurationError("trajectory was built without the amplitude", "amplitude")
        return _pole_brackets(self)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["t", "re_F", "im_F"])
            for t, F in zip(self.grid.times, self.F_values):
                writer.writerow([repr(float(t)), repr(float(F.real)), repr(float(F.imag))])


def _pole_brackets(traj: CoefficientTrajectory) -> np.ndarray:
    Y = traj.amplitude
    turn = Y[1:] * np.conj(Y[:-1])
    flips = np.flatnonzero(turn.real < 0)
    return traj.grid.times[flips]


def _solve_riccati(spec: CoefficientSpec, grid: TimeGrid) -> tuple[np.ndarray, np.ndarray]:
    """RK4 on the linearised Riccati equation for the exponential kernel.

    Integrates ``y'' + (gamma - i Omega) y' + Gamma gamma y = 0`` from
    ``y(0) = 1, y'(0) = 0`` and returns ``F = -y'/(2y)`` together with the
    amplitude ``Y = exp(-i Omega t) y``. The linear form stays regular where
    ``y`` crosses zero and F itself has a pole.
    """
    c1, c0 = spec.damping, spec.Gamma * spec.gamma_env
    hA = grid.dt * np.array([[0.0, 1.0], [-c0, -c1]], dtype=complex)
    # an RK4 step of a linear autonomous system is a fixed matrix
    step = np.eye(2) + hA @ (np.eye(2) + hA @ (np.eye(2) / 2 + hA @ (np.eye(2) / 6 + hA / 24)))
    states = np.empty((len(grid), 2), dtype=complex)
    states[0] = (1.0, 0.0)
    for j in range(grid.n):
        states[j + 1] = step @ states[j]
        if abs(states[j + 1, 0]) < 1e-150:
            states[: j + 2] *= 1e150
    y, dy = states[:, 0], states[:, 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        F = -dy / (2.0 * y)
    F[0] = 0.0
    return F, np.exp(-1j * spec.Omega * grid.times) * y


def _solve_volterra(
    alpha: np.ndarray, Omega: float, dt: float, tol: float, max_iter: int
) -> tuple[np.ndarray, np.ndarray]:
    """Self-consistent F from ``F(t) = int_0^t alpha(t-s) f(t,s) ds``.

    Works with the amplitude ``Y(t) = exp(-int_0^t (i Omega + 2F))``, for which
    ``f(t,s) = Y(s)/Y(t)`` and the problem becomes the linear Volterra
    integro-differential equation ``Y' = -i Omega Y - 2 M`` with
    ``M(t) = int_0^t alpha(t-s) Y(s) ds = F(t) Y(t)``. The memory integral uses
    the trapezoidal rule; time stepping is the trapezoidal rule with an
    explicit Euler predictor and a fixed-point corrector.
    """
    n = len(alpha) - 1
    F = np.zeros(n + 1, dtype=complex)
    Y = np.zeros(n + 1, dtype=complex)
    Y[0] = 1.0
    weighted = np.empty(n + 1, dtype=complex)  # trapezoid-weighted Y history
    weighted[0] = 0.5
    g_prev = -1j * Omega
    half_diag = 0.5 * dt * alpha[0]
    for m in range(1, n + 1):
        history = dt * np.dot(alpha[m:0:-1], weighted[:m])
        y_new = Y[m - 1] + dt * g_prev
        for _ in range(max_iter):
            g_new = -1j * Omega * y_new - 2.0 * (history + half_diag * y_new)
            update = Y[m - 1] + 0.5 * dt * (g_prev + g_new)
            converged = abs(update - y_new) <= tol * abs(update)
            y_new = update
            if converged:
                break
        else:
            raise ConvergenceError(
                f"corrector did not converge within {max_iter} iterations at t={m * dt:g}",
                time=m * dt,
            )
        memory = history + half_diag * y_new
        if not np.isfinite(memory):
            raise NumericalError(f"memory integral overflowed at t={m * dt:g}")
        Y[m] = y_new
        weighted[m] = y_new
        F[m] = memory / y_new if y_new != 0 else complex("inf")
        g_prev = -1j * Omega * y_new - 2.0 * memory
        if abs(y_new) < 1e-150:
            # the problem is linear in Y: rescaling the history leaves F unchanged
            Y[: m + 1] *= 1e150
            weighted[: m + 1] *= 1e150
            g_prev *= 1e150
    return F, Y


def _richardson(F, Y, alpha, Omega, dt, tol, max_iter):
    F2, Y2 = _solve_volterra(alpha[::2], Omega, 2.0 * dt, tol, max_iter)
    even = np.arange(0, len(F), 2)[: len(F2)]
    idx = np.arange(len(F))
    pairs = [(F, F2)]
    if Y[0] == 1 and Y2[0] == 1:  # neither pass rescaled its amplitude
        pairs.append((Y, Y2))
    out = [F, Y]
    for k, (fine, coarse) in enumerate(pairs):
        # the correction is a smooth O(dt^2) function; linear interpolation to
        # odd points adds only O(dt^4)
        corr = (fine[even] - coarse) / 3.0
        out[k] = fine + np.interp(idx, even, corr.real) + 1j * np.interp(idx, even, corr.imag)
    return out[0], out[1]


def solve_F_general(
    kernel: CorrelationKernel,
    Omega: float,
    grid: Optional[TimeGrid] = None,
    method: str = "auto",
    tol: float = 1e-10,
    max_iter: int = 25,
    extrapolate: bool = True,
) -> CoefficientTrajectory:
    """Compute F(t) for an arbitrary sampled kernel.

    ``method="volterra"`` runs the predictor-corrector Volterra scheme on the
    tabulated kernel; with ``extrapolate`` a second pass at twice the step
    removes the leading ``O(dt^2)`` error by Richardson extrapolation. ``method="riccati"`` integrates the linearised Riccati
    equation and needs an exponential kernel. ``"auto"`` picks the Riccati
    reduction for Lorentzian kernels and the Volterra scheme otherwise.

    Raises:
        ConvergenceError: the corrector exceeded ``max_iter`` iterations.
    """
    if grid is None:
        grid = kernel.grid
    elif grid != kernel.grid:
        kernel = kernel.restrict(grid)
    if method == "auto":
        method = "riccati" if kernel.is_exponential else "volterra"
    if method == "riccati":
        if not kernel.is_exponential:
            raise ConfigurationError("Riccati reduction needs an exponential kernel", "method")
        F, Y = _solve_riccati(CoefficientSpec.from_bath(kernel.spec, Omega), grid)
    elif method == "volterra":
        alpha = np.asarray(kernel.values)
        F, Y = _solve_volterra(alpha, float(Omega), grid.dt, tol, max_iter)
        if extrapolate and grid.n >= 4:
            F, Y = _richardson(F, Y, alpha, float(Omega), grid.dt, tol, max_iter)
    else:
        raise ConfigurationError(f"unknown method {method!r}", "method")
    return CoefficientTrajectory(grid, F, Y, method)


def analytic_trajectory(spec: CoefficientSpec, grid: TimeGrid) -> CoefficientTrajectory:
    """Closed-form F on a grid, with the amplitude from the characteristic roots."""
    l1, l2 = spec.roots()
    t = grid.times
    F = np.atleast_1d(analytic_F(spec, t)).copy()
    F[0] = 0.0
    y = (np.exp(l1 * t) - (l1 / l2) * np.exp(l2 * t)) / (1.0 - l1 / l2)
    return CoefficientTrajectory(grid, F, np.exp(-1j * spec.Omega * t) * y, "analytic")
