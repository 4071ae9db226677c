"""Bath spectral densities, correlation kernels and colored-noise sampling.

The environment is described by a complex correlation function ``alpha(tau)``
stored for ``tau >= 0`` on a uniform grid; ``alpha(-tau) = conj(alpha(tau))``.
Noise realizations ``z*_t`` are zero-mean circular complex Gaussian sequences
with ``E[z_t z*_s] = alpha(t - s)`` and ``E[z_t z_s] = 0``.
"""

from __future__ import annotations

import csv
import enum
import functools
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import integrate, linalg, signal

from .exceptions import ConfigurationError, DomainError, KernelValidityError, NumericalError
from .grid import TimeGrid


class KernelFamily(str, enum.Enum):
    LORENTZIAN = "lorentzian"
    SUPER_OHMIC = "super_ohmic"
    TABULATED = "tabulated"


@dataclass(frozen=True)
class BathSpec:
    """Environment parameters in units hbar = M = k_B = 1.

    ``Gamma`` is the coupling strength. For the Lorentzian family it enters
    ``alpha(tau) = Gamma*gamma_env/2 * exp(-gamma_env*tau)``; for the
    super-Ohmic family it is the prefactor of ``J(w) = Gamma * w**3 * exp(-w/Lambda)``.
    ``gamma_env`` is the inverse memory time (Lorentzian only), ``Lambda`` the
    spectral cutoff (super-Ohmic only).
    """

    kernel_family: KernelFamily = KernelFamily.LORENTZIAN
    Gamma: float = 1.0
    gamma_env: float = 1.0
    Lambda: float = 1.0
    temperature: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kernel_family", KernelFamily(self.kernel_family))
        for name in ("Gamma", "gamma_env", "Lambda"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ConfigurationError(f"must be positive, got {value}", name)
        if not (np.isfinite(self.temperature) and self.temperature >= 0):
            raise ConfigurationError(
                f"must be non-negative, got {self.temperature}", "temperature"
            )


@dataclass(frozen=True, eq=False)
class CorrelationKernel:
    """Correlation function sampled at ``tau_j = j*dt``.

    ``spec`` is kept when the kernel came from a parametric family so that
    samplers and solvers can use exact recursions instead of the table.
    """

    grid: TimeGrid
    values: np.ndarray
    spec: Optional[BathSpec] = field(default=None)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=complex)
        if values.shape != (len(self.grid),):
            raise ConfigurationError(
                f"expected {len(self.grid)} kernel values, got {values.shape}", "values"
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def family(self) -> KernelFamily:
        return self.spec.kernel_family if self.spec is not None else KernelFamily.TABULATED

    @property
    def is_exponential(self) -> bool:
        return self.family is KernelFamily.LORENTZIAN

    def restrict(self, grid: TimeGrid) -> "CorrelationKernel":
        """Resample onto a coarser grid whose step is a multiple of ours."""
        stride = grid.dt / self.grid.dt
        k = int(round(stride))
        if k < 1 or abs(stride - k) > 1e-9 * stride or grid.n * k > self.grid.n:
            raise ConfigurationError(
                f"grid (dt={grid.dt}, n={grid.n}) is not a sub-lattice of the kernel grid",
                "grid",
            )
        return CorrelationKernel(grid, self.values[: grid.n * k + 1 : k], self.spec)

    @functools.cached_property
    def covariance_factor(self) -> np.ndarray:
        """Square root ``B`` with ``B @ B^H`` equal to the Toeplitz covariance on the grid."""
        return _toeplitz_sqrt(self.values)

    @functools.cached_property
    def circulant_spectrum(self) -> Optional[np.ndarray]:
        """Eigenvalues of the minimal circulant embedding, or None if it is not PSD."""
        return _circulant_spectrum(self.values)


def lorentzian_kernel(spec: BathSpec, tau):
    """``(Gamma*gamma/2) * exp(-gamma*tau)`` as a complex value (or array)."""
    if spec.kernel_family is not KernelFamily.LORENTZIAN:
        raise ConfigurationError(
            f"lorentzian_kernel needs a Lorentzian bath, got {spec.kernel_family.value}",
            "kernel_family",
        )
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0):
        raise DomainError("lorentzian_kernel is stored for tau >= 0 only")
    out = (0.5 * spec.Gamma * spec.gamma_env) * np.exp(-spec.gamma_env * tau) + 0j
    return out[()] if out.ndim == 0 else out


def superohmic_spectral_density(omega, gamma_J: float, Lambda: float):
    """``J(w) = gamma_J * w**3 * exp(-w/Lambda)`` with exponential cutoff."""
    omega = np.asarray(omega, dtype=float)
    if np.any(omega < 0):
        raise DomainError("spectral density is defined for omega >= 0")
    out = gamma_J * omega**3 * np.exp(-omega / Lambda)
    return out[()] if out.ndim == 0 else out


def _thermal_weight(spectral_density, omega, temperature):
    """``J(w) * coth(w / 2T)``; the w -> 0 limit is 0 for J vanishing faster than w."""
    if temperature == 0:
        return spectral_density(omega)
    if omega == 0:
        return 0.0
    return spectral_density(omega) / math.tanh(omega / (2.0 * temperature))


def kernel_from_spectral_density(
    spec: BathSpec,
    grid: TimeGrid,
    spectral_density=None,
    omega_max: Optional[float] = None,
    rtol: float = 1e-8,
) -> CorrelationKernel:
    """Continuum correlation function of a spectral density, by quadrature.

    ``alpha(tau) = int_0^wmax J(w) [coth(w/2T) cos(w tau) - i sin(w tau)] dw``
    with ``coth = 1`` at ``T = 0``. Each grid point is integrated with QUADPACK's
    Fourier-weighted rule (QAWO) on ``[0, wmax]``, ``wmax = 50*Lambda`` by default,
    so oscillatory integrands at large ``tau`` stay well resolved.

    Raises:
        NumericalError: a quadrature did not meet ``rtol``; the message names
            the offending ``tau`` and QUADPACK's diagnostic.
    """
    if spec.kernel_family is not KernelFamily.SUPER_OHMIC:
        raise ConfigurationError(
            "kernel_from_spectral_density needs the super-Ohmic family", "kernel_family"
        )
    if spectral_density is None:
        spectral_density = functools.partial(
            superohmic_spectral_density, gamma_J=spec.Gamma, Lambda=spec.Lambda
        )
    wmax = 50.0 * spec.Lambda if omega_max is None else float(omega_max)
    T = spec.temperature

    def symmetric(w):
        return _thermal_weight(spectral_density, w, T)

    scale, info = _quad(symmetric, wmax, "cos", 0.0, rtol, 0.0)
    _check_quad(info, 0.0, "real")
    # absolute floor relative to alpha(0): values far down the tail are not
    # resolvable to rtol of themselves
    atol = rtol * abs(scale)
    values = np.empty(len(grid), dtype=complex)
    for j, tau in enumerate(grid.times):
        re, re_info = _quad(symmetric, wmax, "cos", tau, rtol, atol)
        if tau == 0:
            im = 0.0
        else:
            im, im_info = _quad(spectral_density, wmax, "sin", tau, rtol, atol)
            _check_quad(im_info, tau, "imaginary")
        _check_quad(re_info, tau, "real")
        values[j] = re - 1j * im
    return CorrelationKernel(grid, values, spec)


def _quad(fn, wmax, weight, tau, rtol, atol):
    options = dict(epsabs=atol, epsrel=rtol, limit=500, full_output=1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        if tau == 0 and weight == "cos":
            result = integrate.quad(fn, 0.0, wmax, **options)
        else:
            result = integrate.quad(fn, 0.0, wmax, weight=weight, wvar=tau, **options)
    return result[0], result


def _check_quad(result, tau, part):
    # quad(full_output=1) appends a message only when QUADPACK reports ier > 0
    if len(result) > 3:
        raise NumericalError(
            f"quadrature for the {part} part of alpha(tau={tau:g}) did not converge "
            f"(abserr={result[1]:.2e}): {result[3].strip()}"
        )


def kernel_on_grid(spec: BathSpec, grid: TimeGrid, **quad_options) -> CorrelationKernel:
    """Tabulate ``spec``'s correlation function on ``grid``."""
    if spec.kernel_family is KernelFamily.LORENTZIAN:
        return CorrelationKernel(grid, lorentzian_kernel(spec, grid.times), spec)
    if spec.kernel_family is KernelFamily.SUPER_OHMIC:
        return kernel_from_spectral_density(spec, grid, **quad_options)
    raise ConfigurationError(
        "tabulated kernels are loaded from CSV (read_kernel_csv), not computed",
        "kernel_family",
    )


def _toeplitz_sqrt(values: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    cov = linalg.toeplitz(values)  # cov[i, j] = alpha(t_i - t_j)
    evals, evecs = np.linalg.eigh(cov)
    scale = max(float(np.max(np.abs(evals))), np.finfo(float).tiny)
    if evals[0] < -tol * scale:
        raise KernelValidityError(
            f"kernel covariance has eigenvalue {evals[0]:.3e} "
            f"(relative {evals[0] / scale:.3e}) below -{tol:g}"
        )
    return evecs * np.sqrt(np.clip(evals, 0.0, None))


def _circulant_spectrum(values: np.ndarray, tol: float = 1e-8) -> Optional[np.ndarray]:
    n = len(values)
    if n < 3 or values[0].real <= 0:
        return None
    # Hermitian circulant of odd size 2n - 1 whose leading n x n block is the
    # Toeplitz covariance; odd size avoids a middle entry that must be real
    row = np.concatenate([values, np.conj(values[:0:-1])])
    lam = np.fft.fft(row).real
    # clipping negative eigenvalues shifts every covariance entry by at most
    # sum|lam_neg|/m; accept the embedding only if that is negligible
    if -lam[lam < 0].sum() / len(lam) > tol * values[0].real:
        return None
    return np.clip(lam, 0.0, None)


@dataclass(frozen=True, eq=False)
class NoiseRealization:
    grid: TimeGrid
    values: np.ndarray  # z*_j
    seed: int
    index: int


def trajectory_rng(seed: int, index: int, attempt: int = 0) -> np.random.Generator:
    """Independent stream for trajectory ``index``; ``attempt`` > 0 for resampling."""
    key = (int(index),) if attempt == 0 else (int(index), int(attempt))
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))


def _circular_normal(rng: np.random.Generator, n: int) -> np.ndarray:
    pairs = rng.standard_normal((n, 2))
    return (pairs[:, 0] + 1j * pairs[:, 1]) * math.sqrt(0.5)


def sample_noise(
    kernel: CorrelationKernel, seed: int, index: int, attempt: int = 0
) -> NoiseRealization:
    """Draw one colored-noise realization ``z*_j`` on the kernel grid.

    Lorentzian kernels use the exact complex Ornstein-Uhlenbeck recursion,
    started from its stationary law. Other kernels use circulant embedding
    (exact, O(n log n)) when the embedding is positive semidefinite, and
    otherwise a square root of the Toeplitz covariance computed once per kernel.
    """
    n = len(kernel.grid)
    if n == 0:
        raise ConfigurationError("kernel grid is empty", "grid")
    rng = trajectory_rng(seed, index, attempt)
    xi = _circular_normal(rng, n)
    if kernel.is_exponential:
        alpha0 = kernel.values[0].real
        decay = math.exp(-kernel.spec.gamma_env * kernel.grid.dt)
        drive = np.empty(n, dtype=complex)
        drive[0] = math.sqrt(alpha0) * xi[0]
        drive[1:] = math.sqrt(alpha0 * (1.0 - decay * decay)) * xi[1:]
        z = signal.lfilter([1.0], [1.0, -decay], drive)
    elif not np.any(kernel.values):
        z = np.zeros(n, dtype=complex)
    elif kernel.circulant_spectrum is not None:
        lam = kernel.circulant_spectrum
        m = len(lam)
        xi = np.concatenate([xi, _circular_normal(rng, m - n)])
        z = (np.fft.ifft(np.sqrt(lam) * xi) * math.sqrt(m))[:n]
    else:
        z = kernel.covariance_factor @ xi
    return NoiseRealization(kernel.grid, np.conj(z), int(seed), int(index))


def write_kernel_csv(kernel: CorrelationKernel, path) -> None:
    """Write ``tau, re_alpha, im_alpha`` rows with a header."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["tau", "re_alpha", "im_alpha"])
        for tau, value in zip(kernel.grid.times, kernel.values):
            writer.writerow([repr(float(tau)), repr(float(value.real)), repr(float(value.imag))])


def read_kernel_csv(path) -> CorrelationKernel:
    """Load a tabulated kernel written by :func:`write_kernel_csv`."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if len(rows) < 2:
        raise ConfigurationError("tabulated kernel needs at least two rows", "kernel_csv")
    tau = np.array([float(r["tau"]) for r in rows])
    values = np.array([float(r["re_alpha"]) + 1j * float(r["im_alpha"]) for r in rows])
    dt = tau[1] - tau[0]
    if tau[0] != 0 or not np.allclose(np.diff(tau), dt, rtol=1e-9, atol=0):
        raise ConfigurationError("tabulated kernel must start at 0 on a uniform grid", "kernel_csv")
    return CorrelationKernel(TimeGrid(float(dt), len(rows) - 1), values)
