"""Truncated two-mode Fock space.

Basis ordering is fixed globally: ``|n1, n2>`` lives at index ``n1*(N+1) + n2``
(mode 2 varies fastest), i.e. operators on mode 1 are ``kron(A, I)`` and on
mode 2 ``kron(I, A)``. Kets are complex vectors of length ``(N+1)**2`` and
density matrices complex square arrays of that size.
"""

from __future__ import annotations

import functools
import math
import warnings
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy import linalg

from .exceptions import ConfigurationError, TruncationError, TruncationWarning

LEAKAGE_WARN = 1e-6
LEAKAGE_ERROR = 1e-3


def annihilation(levels: int) -> np.ndarray:
    """Single-mode ``a`` on occupations ``0..levels``: ``sqrt(n)`` at ``(n-1, n)``."""
    if levels < 1:
        raise ConfigurationError("need at least one excitation level", "levels")
    return np.diag(np.sqrt(np.arange(1, levels + 1, dtype=float)), k=1).astype(complex)


@dataclass(frozen=True)
class TruncationSpec:
    """Each mode keeps occupations ``0..levels_per_mode``."""

    levels_per_mode: int

    def __post_init__(self):
        if int(self.levels_per_mode) != self.levels_per_mode or self.levels_per_mode < 1:
            raise ConfigurationError("must be an integer >= 1", "levels_per_mode")

    @property
    def local_dim(self) -> int:
        return self.levels_per_mode + 1

    @property
    def dim(self) -> int:
        return self.local_dim**2

    def index(self, n1: int, n2: int) -> int:
        N = self.levels_per_mode
        if not (0 <= n1 <= N and 0 <= n2 <= N):
            raise ConfigurationError(f"occupation ({n1}, {n2}) outside 0..{N}", "occupation")
        return n1 * self.local_dim + n2

    def occupations(self, index: int) -> tuple[int, int]:
        if not 0 <= index < self.dim:
            raise ConfigurationError(f"index {index} outside 0..{self.dim - 1}", "index")
        return divmod(index, self.local_dim)

    @functools.cached_property
    def operators(self) -> "ModeOperators":
        return ModeOperators.build(self)


@dataclass(frozen=True, eq=False)
class ModeOperators:
    """Dense operator matrices of one truncation, built once and shared read-only."""

    a1: np.ndarray
    a2: np.ndarray
    n1: np.ndarray
    n2: np.ndarray
    lindblad: np.ndarray  # a1 + a2
    control: np.ndarray  # (a1 - a2 + a1^dag - a2^dag)^2
    x1: np.ndarray
    p1: np.ndarray
    x2: np.ndarray
    p2: np.ndarray

    @classmethod
    def build(cls, trunc: TruncationSpec) -> "ModeOperators":
        a = annihilation(trunc.levels_per_mode)
        eye = np.eye(trunc.local_dim)
        a1 = np.kron(a, eye)
        a2 = np.kron(eye, a)
        mixed = a1 - a2 + a1.conj().T - a2.conj().T
        ops = dict(
            a1=a1,
            a2=a2,
            n1=a1.conj().T @ a1,
            n2=a2.conj().T @ a2,
            lindblad=a1 + a2,
            control=mixed @ mixed,
            x1=(a1 + a1.conj().T) / math.sqrt(2),
            p1=(a1 - a1.conj().T) / (1j * math.sqrt(2)),
            x2=(a2 + a2.conj().T) / math.sqrt(2),
            p2=(a2 - a2.conj().T) / (1j * math.sqrt(2)),
        )
        for value in ops.values():
            value.setflags(write=False)
        return cls(**ops)

    @property
    def quadratures(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """``(x1, p1, x2, p2)`` with ``x = (a + a^dag)/sqrt 2``."""
        return self.x1, self.p1, self.x2, self.p2


def system_hamiltonian(Omega: float, k: float, trunc: TruncationSpec) -> np.ndarray:
    """``Omega (n1 + n2) + k (a1 - a2 + a1^dag - a2^dag)^2``.

    The square is taken as the matrix product of the truncated operators, which
    keeps it Hermitian and positive semidefinite.
    """
    ops = trunc.operators
    return Omega * (ops.n1 + ops.n2) + k * ops.control


def lindblad_operator(trunc: TruncationSpec) -> np.ndarray:
    """``L = a1 + a2``."""
    return trunc.operators.lindblad


@dataclass(frozen=True)
class Fock:
    n1: int
    n2: int


@dataclass(frozen=True)
class Coherent:
    alpha1: complex
    alpha2: complex


@dataclass(frozen=True)
class Cat:
    """``|alpha> + exp(i pi parity) |-alpha>`` on mode 1, vacuum on mode 2."""

    alpha: complex
    parity: int = 0


@dataclass(frozen=True)
class TwoModeSqueezed:
    """``exp(-r (a1^dag a2^dag - a1 a2)) |0, 0>``."""

    r: float


StateKind = Union[Fock, Coherent, Cat, TwoModeSqueezed]


def _coherent_amplitudes(alpha: complex, levels: int) -> np.ndarray:
    n = np.arange(levels + 1)
    log_fact = np.array([math.lgamma(k + 1) for k in n])
    amps = np.exp(-0.5 * abs(alpha) ** 2 - 0.5 * log_fact) * np.power(complex(alpha), n)
    return amps.astype(complex)


def _build_state(kind: StateKind, trunc: TruncationSpec) -> np.ndarray:
    N = trunc.levels_per_mode
    if isinstance(kind, Fock):
        psi = np.zeros(trunc.dim, dtype=complex)
        psi[trunc.index(kind.n1, kind.n2)] = 1.0
        return psi
    if isinstance(kind, Coherent):
        return np.kron(_coherent_amplitudes(kind.alpha1, N), _coherent_amplitudes(kind.alpha2, N))
    if isinstance(kind, Cat):
        plus = _coherent_amplitudes(kind.alpha, N)
        minus = _coherent_amplitudes(-kind.alpha, N)
        mode1 = plus + np.exp(1j * math.pi * kind.parity) * minus
        if np.linalg.norm(mode1) < 1e-12:
            raise ConfigurationError("odd cat with alpha = 0 is the null vector", "alpha")
        vac = np.zeros(trunc.local_dim, dtype=complex)
        vac[0] = 1.0
        return np.kron(mode1, vac)
    if isinstance(kind, TwoModeSqueezed):
        ops = trunc.operators
        pair = ops.a1.conj().T @ ops.a2.conj().T
        generator = -kind.r * (pair - pair.conj().T)
        vac = np.zeros(trunc.dim, dtype=complex)
        vac[0] = 1.0
        return linalg.expm(generator) @ vac
    raise ConfigurationError(f"unknown state kind {kind!r}", "kind")


def leakage(state: np.ndarray, trunc: TruncationSpec) -> float:
    """Population with ``n1 = N`` or ``n2 = N`` for a ket or a density matrix."""
    state = np.asarray(state)
    if state.ndim == 1:
        pops = np.abs(state) ** 2 / np.vdot(state, state).real
    else:
        pops = np.real(np.diag(state)) / np.real(np.trace(state))
    grid = pops.reshape(trunc.local_dim, trunc.local_dim)
    edge = grid[-1, :].sum() + grid[:-1, -1].sum()
    return float(edge)


def prepare_state(kind: StateKind, trunc: TruncationSpec, check: bool = True) -> np.ndarray:
    """Normalized ket for ``kind`` in the truncated space.

    Raises:
        TruncationError: edge population above 1e-3; ``required_levels`` names
            the smallest truncation that brings it below 1e-6.
    Warns:
        TruncationWarning: edge population above 1e-6.
    """
    psi = _build_state(kind, trunc)
    psi = psi / np.linalg.norm(psi)
    if check:
        leak = leakage(psi, trunc)
        if leak > LEAKAGE_ERROR:
            need = required_levels(kind, start=trunc.levels_per_mode + 1)
            raise TruncationError(
                f"{kind} leaks {leak:.2e} of its population to the truncation edge "
                f"at N={trunc.levels_per_mode}; use N >= {need}",
                required_levels=need,
            )
        if leak > LEAKAGE_WARN:
            warnings.warn(
                f"{kind} has edge population {leak:.2e} at N={trunc.levels_per_mode}",
                TruncationWarning,
                stacklevel=2,
            )
    return psi


def required_levels(kind: StateKind, start: int = 1, limit: int = 80) -> int:
    """Smallest truncation whose edge population is below the warning threshold."""
    for N in range(max(1, start), limit + 1):
        trunc = TruncationSpec(N)
        psi = _build_state(kind, trunc)
        if leakage(psi, trunc) <= LEAKAGE_WARN:
            return N
    return limit


def projector(psi: np.ndarray) -> np.ndarray:
    return np.outer(psi, psi.conj())


def partial_transpose(rho: np.ndarray, mode: int = 2) -> np.ndarray:
    """Transpose the bra/ket indices of one mode."""
    d = rho.shape[0]
    local = math.isqrt(d)
    if local * local != d or rho.shape != (d, d):
        raise ConfigurationError("expected a square matrix on a two-mode space", "rho")
    r4 = rho.reshape(local, local, local, local)  # (i1, i2, j1, j2)
    if mode == 2:
        out = r4.transpose(0, 3, 2, 1)
    elif mode == 1:
        out = r4.transpose(2, 1, 0, 3)
    else:
        raise ConfigurationError("mode must be 1 or 2", "mode")
    return out.reshape(d, d)
