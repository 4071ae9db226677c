import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracle_values import ME_EN_1_3_1_N8, ME_EN_1_3_1_N8_K, ME_TIMES
from qbmsim.coefficients import CoefficientSpec, CoefficientTrajectory, analytic_trajectory
from qbmsim.control import Constant
from qbmsim.exceptions import ConfigurationError, RunError
from qbmsim.grid import TimeGrid
from qbmsim.hilbert import Fock, TruncationSpec, TwoModeSqueezed, prepare_state, projector
from qbmsim.master import (
    MasterRun,
    integrate_master,
    me_rhs,
    read_rho_dump,
    write_rho_dump,
)
from qbmsim.observables import log_negativity_fock, purity


def _coeff(spec, t_end, dt=5e-4):
    return analytic_trajectory(CoefficientSpec(*spec), TimeGrid.from_span(t_end, dt))


def _constant_F(F, t_end, dt=1e-3):
    grid = TimeGrid.from_span(t_end, dt)
    return CoefficientTrajectory(grid, np.full(len(grid), F, dtype=complex))


def _bell(sign, trunc):
    psi = prepare_state(Fock(1, 0), trunc) + sign * prepare_state(Fock(0, 1), trunc)
    return projector(psi / math.sqrt(2))


def test_vacuum_is_stationary():
    trunc = TruncationSpec(3)
    vac = projector(prepare_state(Fock(0, 0), trunc))
    assert np.max(np.abs(me_rhs(vac, 0.0, 0.7 + 0.3j, 0.0, 1.0))) == 0


@given(st.integers(0, 2**32 - 1), st.complex_numbers(max_magnitude=3), st.floats(-0.5, 0.5))
def test_rhs_is_traceless(seed, F, k):
    rng = np.random.default_rng(seed)
    m = rng.normal(size=(16, 16)) + 1j * rng.normal(size=(16, 16))
    rho = m + m.conj().T
    assert abs(np.trace(me_rhs(rho, 0.0, F, k, 1.0))) < 1e-12 * max(1.0, np.abs(rho).max())


def test_symmetric_bell_decay_rate():
    trunc = TruncationSpec(2)
    F = 0.4 + 0.25j
    rho = _bell(+1, trunc)
    L = trunc.operators.lindblad
    LdL = L.conj().T @ L
    n0 = np.trace(LdL @ rho).real
    assert n0 == pytest.approx(2.0)
    # instantaneous rate from the generator
    rate = np.trace(LdL @ me_rhs(rho, 0.0, F, 0.0, 1.0)).real
    assert rate == pytest.approx(-4 * F.real * n0, abs=1e-12)
    # and from a finite difference of the integrator
    dt = 1e-4
    out = integrate_master(MasterRun(rho, (0, 2 * dt), dt, _constant_F(F, 1e-3, dt)))
    fd = (np.trace(LdL @ out.states[1]).real - n0) / dt
    assert fd == pytest.approx(-4 * F.real * n0, rel=1e-3)


def test_closed_system_keeps_purity():
    trunc = TruncationSpec(3)
    rho = projector(prepare_state(TwoModeSqueezed(0.2), trunc))
    run = MasterRun(rho, (0, 5), 1e-3, _constant_F(0, 5), Constant(0.02), stride=100, leakage_limit=1.0)
    out = integrate_master(run)
    assert max(abs(purity(s) - 1) for s in out.states) < 1e-8


def test_dark_state_is_stationary():
    trunc = TruncationSpec(3)
    rho = _bell(-1, trunc)
    out = integrate_master(MasterRun(rho, (0, 5), 1e-3, _coeff((1, 3, 1), 5), stride=500))
    assert np.max(np.abs(out.states - rho)) < 1e-8


def test_entanglement_matches_liouvillian_reference():
    trunc = TruncationSpec(8)  # d = 81 exercises the sparse path
    rho = projector(prepare_state(TwoModeSqueezed(0.3), trunc))
    for k, ref in [(0.0, ME_EN_1_3_1_N8), (0.05, ME_EN_1_3_1_N8_K)]:
        out = integrate_master(MasterRun(rho, (0, 2), 1e-3, _coeff((1, 3, 1), 2), Constant(k), stride=500))
        EN = [log_negativity_fock(s) for s in out.states]
        np.testing.assert_allclose([EN[i] for i in (0, 1, 2, 4)], ref, atol=1e-8)
        np.testing.assert_allclose(out.times[[0, 1, 2, 4]], ME_TIMES)


def test_dense_and_sparse_paths_agree(monkeypatch):
    import qbmsim.master as master

    trunc = TruncationSpec(5)
    rho = projector(prepare_state(Fock(1, 2), trunc))
    run = MasterRun(rho, (0, 0.5), 1e-3, _coeff((1, 3, 1), 0.5), Constant(0.05), stride=500)
    monkeypatch.setattr(master, "SPARSE_MIN_DIM", 10**6)
    dense = integrate_master(run).states
    monkeypatch.setattr(master, "SPARSE_MIN_DIM", 1)
    sparse = integrate_master(run).states
    np.testing.assert_allclose(dense, sparse, atol=1e-12)


def test_plateau_and_invariants_for_non_markovian_bath():
    trunc = TruncationSpec(3)
    rho = projector(prepare_state(TwoModeSqueezed(0.3), trunc))
    out = integrate_master(MasterRun(rho, (0, 10), 1e-3, _coeff((1, 3, 1), 10), stride=50))
    EN = np.array([log_negativity_fock(s) for s in out.states])
    d = np.diff(EN)
    assert np.any(d > 1e-6) and np.any(d < -1e-6)  # non-monotone
    late = EN[out.times >= 9.0]
    assert late.mean() > 0.05 and np.ptp(late) < 0.05
    diag = out.diagnostics
    assert diag["max_trace_drift"] < 1e-8
    assert diag["max_hermiticity_error"] < 1e-10
    assert diag["min_eigenvalue"] > -1e-6


def test_pole_aborts_with_diagnostics():
    trunc = TruncationSpec(2)
    rho = projector(prepare_state(Fock(1, 0), trunc))
    with pytest.raises(RunError) as info:
        integrate_master(MasterRun(rho, (0, 4), 1e-3, _coeff((1, 3, 0), 4), Omega=0.0))
    assert info.value.diagnostics["reason"] == "stiffness"
    assert 2.9 < info.value.diagnostics["time"] < 3.03


def test_leakage_abort():
    trunc = TruncationSpec(3)
    rho = projector(prepare_state(TwoModeSqueezed(0.3), trunc))
    run = MasterRun(rho, (0, 1), 1e-3, _coeff((1, 3, 1), 1), Constant(0.1), stride=10, leakage_limit=1e-4)
    with pytest.raises(RunError) as info:
        integrate_master(run)
    assert info.value.diagnostics["reason"] == "truncation leakage"


def test_run_validation():
    rho = projector(prepare_state(Fock(0, 0), TruncationSpec(1)))
    with pytest.raises(ConfigurationError):
        MasterRun(rho, (0, 1), 3e-4, _coeff((1, 3, 1), 1, 1e-3))
    with pytest.raises(ConfigurationError):
        MasterRun(rho, (0, 2), 1e-3, _coeff((1, 3, 1), 1, 1e-3))
    with pytest.raises(ConfigurationError):
        MasterRun(np.eye(5), (0, 1), 1e-3, _coeff((1, 3, 1), 1, 1e-3))


def test_callback_sees_every_snapshot():
    rho = projector(prepare_state(Fock(1, 0), TruncationSpec(2)))
    seen = []
    out = integrate_master(MasterRun(rho, (0, 1), 1e-3, _coeff((1, 3, 1), 1), stride=250), lambda t, r: seen.append(t))
    np.testing.assert_allclose(seen, out.times)
    np.testing.assert_allclose(out.times, [0, 0.25, 0.5, 0.75, 1.0])


def test_rho_dump_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    states = rng.normal(size=(3, 9, 9)) + 1j * rng.normal(size=(3, 9, 9))
    write_rho_dump(tmp_path / "rho.bin", states)
    raw = (tmp_path / "rho.bin").read_bytes()
    assert raw[:4] == b"RHO1" and len(raw) == 16 + 3 * 81 * 16
    assert np.array_equal(read_rho_dump(tmp_path / "rho.bin"), states)
    (tmp_path / "bad.bin").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ConfigurationError):
        read_rho_dump(tmp_path / "bad.bin")


def test_opposite_sign_is_selectable():
    rho = projector(prepare_state(TwoModeSqueezed(0.2), TruncationSpec(3)))
    a = me_rhs(rho, 0, 0.3, 0.1, 1.0, hamiltonian_sign=-1)
    b = me_rhs(rho, 0, 0.3, 0.1, 1.0, hamiltonian_sign=+1)
    diss = me_rhs(rho, 0, 0.3, 0.1, 0.0, hamiltonian_sign=-1) - me_rhs(rho, 0, 0, 0.1, 0.0, hamiltonian_sign=-1)
    np.testing.assert_allclose(0.5 * (a + b), diss, atol=1e-12)
    with pytest.raises(ConfigurationError):
        me_rhs(rho, 0, 0.3, 0.1, 1.0, hamiltonian_sign=2)
