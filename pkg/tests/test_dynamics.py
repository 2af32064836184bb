import numpy as np
import pytest
import scipy.linalg as sl
from hypothesis import given, settings, strategies as st

from qndspin.dynamics import (
    MomentEngine,
    active_modes,
    conditional_mean_step,
    deterministic_drift,
    evolve_deterministic,
    fundamental_qutrit_check,
    initial_moment_state,
    metrological_squeezing,
    paired_update,
    record_variance_model,
    spin_coefficients,
    stability_dt,
)
from qndspin.errors import DomainError
from qndspin.geometry import OverlapTables, build_overlap_tables, slice_mode_integrals
from qndspin.oracle import discrete_atom_engine
from qndspin.pipelines import build_model
from qndspin.probe import D2
from qndspin.pumping import color_tables


@pytest.fixture(scope="module")
def small_model(nominal_cfg):
    return build_model(nominal_cfg, n_slices=4)


@pytest.fixture(scope="module")
def quiet_model(nominal_cfg):
    return build_model(nominal_cfg, n_slices=4, pumping=False)


def test_spin_coefficients_f4():
    c = spin_coefficients(4)
    assert c.v_up == pytest.approx(np.sqrt(2), rel=1e-14)
    assert c.w_up == pytest.approx(np.sqrt(7), rel=1e-14)
    np.testing.assert_allclose(c.fz_weights, fundamental_qutrit_check(), atol=1e-12)


def test_spin_coefficients_spin_half_and_invalid():
    assert spin_coefficients(0.5).w_up == 0.0
    assert spin_coefficients(0.5).v_up == pytest.approx(0.5)
    with pytest.raises(DomainError):
        spin_coefficients(1.3)


@settings(max_examples=30, deadline=None)
@given(st.floats(1.0, 1e7), st.floats(0.1, 1.0))
def test_coherent_state_not_squeezed(N1, ratio):
    N2 = ratio * N1
    assert metrological_squeezing(N2 * 4 / 2, 4 * N1, N1, N2) == pytest.approx(1.0, rel=1e-12)


def test_squeezing_rejects_vanished_spin():
    with pytest.raises(DomainError):
        metrological_squeezing(1.0, 0.0, 1.0, 1.0)


def test_initial_path_is_coherent(nominal_path):
    assert nominal_path.xi_m_sq[0] == pytest.approx(1.0, rel=1e-10)


def test_frozen_without_probe(quiet_model):
    eng = quiet_model.engine
    ov = OverlapTables(np.ones((eng.K, eng.M, eng.M)), np.ones((eng.K, eng.M, eng.M, eng.M)),
                       list(range(eng.M)), np.zeros(eng.K))
    frozen = MomentEngine(ov, None, 0.0)
    s = quiet_model.state
    out = deterministic_drift(s, frozen, 1e-6)
    np.testing.assert_array_equal(out.N, s.N)
    np.testing.assert_allclose(out.C, s.C, rtol=0, atol=0)
    with pytest.raises(DomainError):
        stability_dt(frozen, s)


def test_variance_follows_riccati_without_pumping(quiet_model):
    p = evolve_deterministic(quiet_model.state, quiet_model.engine, 200e-6, 0.5e-6)
    V0, k = p.var_fz[0], quiet_model.kappa
    np.testing.assert_allclose(p.var_fz, V0 / (1 + k * p.t * V0), rtol=1e-8)
    assert np.all(np.diff(p.var_fz) < 0)
    np.testing.assert_allclose(p.fx, p.fx[0], rtol=1e-14)


def test_populations_match_matrix_exponential(cs, gamma2):
    tab = color_tables(cs, D2, -580 * gamma2).scaled(2e4)
    beta = np.array([1.0, 0.55, 0.2])
    eng, st0 = discrete_atom_engine(beta, tab, 0.0)
    T, n = 60e-6, 300
    s = st0
    for _ in range(n):
        s = deterministic_drift(s, eng, T / n)
    for k, b in enumerate(beta):
        expect = sl.expm(b * tab.T_nn * T) @ np.array([b, 0, 0])
        np.testing.assert_allclose(s.N[k, 0], expect, rtol=1e-9, atol=1e-14)


def test_zero_noise_leaves_means_unchanged(quiet_model):
    eng, s = quiet_model.engine, quiet_model.state
    X = np.random.default_rng(1).normal(size=s.n)
    Xn, dM = paired_update(eng, s.N, X, eng.gain(s.C), 0.0, 1e-7)
    np.testing.assert_array_equal(Xn, X)
    assert dM == pytest.approx(X @ eng.h * 1e-7, rel=1e-14)


def test_mean_update_is_unbiased(small_model):
    eng, s = small_model.engine, small_model.state
    rng = np.random.default_rng(7)
    dt = 1e-7
    n = 40_000
    dW = rng.normal(scale=np.sqrt(dt), size=n)
    Xb = np.broadcast_to(s.X, (n,) + s.X.shape)
    state = s.copy()
    state.X = Xb
    Xn, dM = conditional_mean_step(state, eng, dW, dt)
    drift = eng.mean_drift(s.N, s.X.reshape(-1)) * dt
    spread = np.abs(eng.gain(s.C)) * np.sqrt(dt) / np.sqrt(n)
    dev = np.abs(Xn.reshape(n, -1).mean(axis=0) - drift)
    assert np.all(dev <= 5 * spread + 1e-12)
    assert abs(dM.mean()) < 5 * np.sqrt(dt / eng.kappa / n)


def test_kalman_gain_identity(small_model):
    eng, s = small_model.engine, small_model.state
    assert eng.h @ eng.gain(s.C) == pytest.approx(np.sqrt(eng.kappa) * eng.fz_var(s.C), rel=1e-12)


def test_nominal_path_invariants(nominal_path, nominal_model):
    p = nominal_path
    assert np.all(p.var_fz > 0)
    total = p.populations.sum(axis=1)
    assert np.all(np.diff(total) <= 1e-9 * total[0])
    assert np.all(p.fx > 0) and np.all(np.diff(p.fx) < 0)
    V0, k = p.var_fz[0], nominal_model.kappa
    assert np.all(p.xi_m_sq >= (1 - 1e-12) / (1 + k * p.t * V0))
    assert 0 < p.loss()[-1] < 1


def test_mode_sign_convention_irrelevant(small_model):
    m = small_model
    ov = build_overlap_tables(m.basis)
    first, second = slice_mode_integrals(m.cloud, m.basis)
    idx = active_modes(ov, True)

    def run(sign):
        c = np.einsum("a,b,kab->kab", sign, sign, ov.c)
        g = np.einsum("a,b,c,kabc->kabc", sign, sign, sign, ov.g)
        ov2 = OverlapTables(c, g, ov.modes, ov.z)
        st0 = initial_moment_state(first * sign, second * np.outer(sign, sign), idx)
        eng = MomentEngine(ov2, m.engine.tables, m.kappa, modes=idx)
        return evolve_deterministic(st0, eng, 40e-6, 0.4e-6)

    sign = np.ones(ov.n_modes)
    ref = run(sign)
    sign[idx[1]] = -1
    flipped = run(sign)
    np.testing.assert_allclose(flipped.var_fz, ref.var_fz, rtol=1e-10)
    np.testing.assert_allclose(flipped.fx, ref.fx, rtol=1e-12)


def test_engine_rejects_bad_inputs(small_model):
    ov = build_overlap_tables(small_model.basis)
    with pytest.raises(DomainError):
        MomentEngine(ov, None, -1.0)
    with pytest.raises(DomainError):
        MomentEngine(ov, None, 1.0, modes=[1, 0])
    with pytest.raises(DomainError):
        deterministic_drift(small_model.state, small_model.engine, 0.0)
    with pytest.raises(DomainError):
        evolve_deterministic(small_model.state, small_model.engine, 1e-9, 1e-6)


def test_record_model_static_limit(quiet_model):
    T = 120e-6
    pn, sn = record_variance_model(quiet_model.state, quiet_model.engine, T, 0.5e-6)
    V0 = quiet_model.engine.fz_var(quiet_model.state.C)
    assert pn == pytest.approx(T**2 * V0, rel=1e-10)
    assert sn == pytest.approx(T / quiet_model.kappa, rel=1e-14)


def test_record_model_pumping_decorrelates(small_model):
    T = 120e-6
    pn, _ = record_variance_model(small_model.state, small_model.engine, T, 0.5e-6)
    V0 = small_model.engine.fz_var(small_model.state.C)
    assert 0 < pn < T**2 * V0
