import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qbmsim.gaussian import cm_two_mode_squeezed
from qbmsim.hilbert import Cat, Coherent, Fock, TruncationSpec, TwoModeSqueezed, prepare_state, projector
from qbmsim.observables import (
    fock_covariance,
    l1_coherence,
    log_negativity_fock,
    mean_energy,
    purity,
    trace_distance,
)

TR = TruncationSpec(2)


def _ket(*pairs):
    psi = sum(c * prepare_state(Fock(*n), TR) for c, n in pairs)
    return psi / np.linalg.norm(psi)


def test_log_negativity_examples():
    assert log_negativity_fock(projector(_ket((1, (1, 0))))) == 0.0
    bell = projector(_ket((1, (1, 0)), (1, (0, 1))))
    assert log_negativity_fock(bell) == pytest.approx(math.log(2), abs=1e-12)
    tmsv = projector(prepare_state(TwoModeSqueezed(0.3), TruncationSpec(12)))
    assert log_negativity_fock(tmsv) == pytest.approx(0.6, abs=1e-3)


def test_coherence_examples():
    assert l1_coherence(np.diag([0.5, 0.25, 0.25, 0, 0, 0, 0, 0, 0])) == 0
    plus = np.kron(np.array([1, 1, 0]) / math.sqrt(2), [1, 0, 0])
    assert l1_coherence(projector(plus)) == pytest.approx(1.0)


def test_energy_purity_distance_examples():
    vac = projector(_ket((1, (0, 0))))
    assert mean_energy(vac, 1.0, 0.0) == 0
    assert purity(vac) == pytest.approx(1.0)
    assert trace_distance(vac, vac) == 0
    assert trace_distance(vac, projector(_ket((1, (1, 1))))) == pytest.approx(1.0)


def test_energy_includes_control_term():
    vac = projector(_ket((1, (0, 0))))
    assert mean_energy(vac, 1.0, 0.3) == pytest.approx(0.6)


def _random_state(rng, d=9, rank=None):
    rank = rank or d
    m = rng.normal(size=(d, rank)) + 1j * rng.normal(size=(d, rank))
    rho = m @ m.conj().T
    return rho / np.trace(rho).real


@given(st.integers(0, 2**32 - 1))
def test_trace_distance_triangle_inequality(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (_random_state(rng, rank=rng.integers(1, 10)) for _ in range(3))
    assert trace_distance(a, c) <= trace_distance(a, b) + trace_distance(b, c) + 1e-9
    assert trace_distance(a, b) == pytest.approx(trace_distance(b, a), abs=1e-12)


@given(st.integers(0, 2**32 - 1), st.integers(1, 9))
def test_purity_bounds_and_coherence_sign(seed, rank):
    rho = _random_state(np.random.default_rng(seed), rank=rank)
    assert 0 <= purity(rho) <= 1 + 1e-8
    assert l1_coherence(rho) >= 0


@given(st.sampled_from([Fock(2, 1), Coherent(0.4j, 0.2), Cat(0.6, 1), TwoModeSqueezed(0.2)]))
def test_pure_states_have_unit_purity(kind):
    assert purity(projector(prepare_state(kind, TruncationSpec(10), check=False))) == pytest.approx(1.0, abs=1e-12)


def test_coherence_zero_iff_diagonal():
    rho = np.diag([0.6, 0.4, 0, 0]).astype(complex)
    assert l1_coherence(rho) == 0
    rho[0, 1] = rho[1, 0] = 1e-11
    assert l1_coherence(rho) > 0


def test_fock_covariance_of_squeezed_state():
    trunc = TruncationSpec(14)
    sigma, mean = fock_covariance(projector(prepare_state(TwoModeSqueezed(0.3), trunc)), trunc)
    np.testing.assert_allclose(sigma, cm_two_mode_squeezed(0.3).sigma, atol=1e-4)
    np.testing.assert_allclose(mean, 0, atol=1e-12)
