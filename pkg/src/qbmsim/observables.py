"""Scalar diagnostics of two-mode density matrices in the Fock product basis."""

from __future__ import annotations

import math

import numpy as np

from .hilbert import TruncationSpec, partial_transpose, system_hamiltonian

NEGATIVITY_CUTOFF = 1e-10


def _hermitian_part(rho):
    return 0.5 * (rho + rho.conj().T)


def log_negativity_fock(rho: np.ndarray) -> float:
    """``ln(1 + 2 * sum |negative eigenvalues|)`` of the partial transpose over mode 2.

    Returns 0 unless some eigenvalue lies below ``-1e-10``.
    """
    evals = np.linalg.eigvalsh(_hermitian_part(partial_transpose(rho, 2)))
    negative = evals[evals < -NEGATIVITY_CUTOFF]
    if negative.size == 0:
        return 0.0
    return math.log1p(-2.0 * float(negative.sum()))


def l1_coherence(rho: np.ndarray) -> float:
    """Sum of off-diagonal moduli in the Fock product basis."""
    mags = np.abs(rho)
    return float(mags.sum() - np.trace(mags))


def mean_energy(rho: np.ndarray, Omega: float, k: float, trunc: TruncationSpec = None) -> float:
    """``Tr(rho H)`` with ``H = Omega (n1 + n2) + k (a1 - a2 + a1^dag - a2^dag)^2``."""
    if trunc is None:
        trunc = TruncationSpec(math.isqrt(rho.shape[0]) - 1)
    H = system_hamiltonian(Omega, k, trunc)
    return float(np.real(np.sum(H.T * rho)))


def purity(rho: np.ndarray) -> float:
    """``Tr(rho^2)``, computed as the squared Frobenius norm of a Hermitian rho."""
    return float(np.real(np.vdot(rho.conj().T, rho)))


def trace_distance(rho_a: np.ndarray, rho_b: np.ndarray) -> float:
    """``(1/2) || rho_a - rho_b ||_1``."""
    diff = _hermitian_part(rho_a - rho_b)
    return 0.5 * float(np.abs(np.linalg.eigvalsh(diff)).sum())


def expectation(rho: np.ndarray, op: np.ndarray) -> complex:
    """``Tr(rho op)``."""
    return complex(np.sum(op.T * rho))


def fock_covariance(rho: np.ndarray, trunc: TruncationSpec = None):
    """Symmetrised second moments and means of ``(x1, p1, x2, p2)`` from a density matrix.

    Returns ``(sigma, mean)`` with
    ``sigma_ij = Tr[(xi_i xi_j + xi_j xi_i) rho]/2 - Tr[xi_i rho] Tr[xi_j rho]``.
    """
    if trunc is None:
        trunc = TruncationSpec(math.isqrt(rho.shape[0]) - 1)
    quads = trunc.operators.quadratures
    mean = np.array([expectation(rho, q).real for q in quads])
    sigma = np.empty((4, 4))
    for i, qi in enumerate(quads):
        for j in range(i, 4):
            qj = quads[j]
            sym = 0.5 * (expectation(rho, qi @ qj) + expectation(rho, qj @ qi)).real
            sigma[i, j] = sigma[j, i] = sym - mean[i] * mean[j]
    return sigma, mean
