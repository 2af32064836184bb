import numpy as np
import pytest
import scipy.linalg as sl
from hypothesis import given, settings, strategies as st

from qndspin.atomic import spin_matrices
from qndspin.probe import D1, D2
from qndspin.pumping import (
    averaged_map_generator,
    choi_matrix,
    color_tables,
    jump_operators,
    larmor_average,
    qutrit_basis,
    qutrit_projected_tables,
    rotated_map,
    single_atom_pumping_map,
    two_color_tables,
)


@pytest.fixture(scope="module")
def d2_map(cs, gamma2):
    return single_atom_pumping_map(cs, D2, -580 * gamma2)


@pytest.fixture(scope="module")
def d2_tables(cs, gamma2):
    return color_tables(cs, D2, -580 * gamma2)


def random_density(rng, dim=9):
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    rho = a @ a.conj().T
    return rho / np.trace(rho)


def test_qutrit_basis_isometry():
    q = qutrit_basis()
    np.testing.assert_allclose(q.states.conj().T @ q.states, np.eye(3), atol=1e-12)
    fx = spin_matrices(4)[0]
    for k, m in enumerate((4, 3, 2)):
        np.testing.assert_allclose(fx @ q.states[:, k], m * q.states[:, k], atol=1e-12)


def test_qutrit_operators_orthonormal():
    q = qutrit_basis()
    ops = q.n_ops + q.x_ops + q.y_ops
    G = np.array([[np.trace(a.conj().T @ b) for b in ops] for a in ops])
    np.testing.assert_allclose(G, np.eye(9), atol=1e-12)


def test_qutrit_weights():
    q = qutrit_basis()
    np.testing.assert_allclose(q.fz_weights(), [2.0, 0.0, np.sqrt(7)], atol=1e-12)
    np.testing.assert_allclose(q.fx_weights(), [4.0, 3.0, 2.0], atol=1e-12)


@pytest.mark.parametrize("jp,ratio,expect", [(D2, -580, 0.2244707), (D1, 545, 0.4520976)])
def test_loss_fraction_maximally_mixed(cs, jp, ratio, expect):
    g = cs.manifold(jp).gamma
    m = single_atom_pumping_map(cs, jp, ratio * g)
    ops = jump_operators(cs, jp, ratio * g)
    rho = np.eye(9) / 9
    total = np.trace(ops.scattering_operator).real / 9
    assert -np.trace(m.apply(rho)).real / total == pytest.approx(expect, rel=1e-6)


@pytest.mark.parametrize("jp,expect", [(D2, 2 / 3), (D1, 1 / 3)])
def test_unpolarised_total_rate(cs, jp, expect):
    g = cs.manifold(jp).gamma
    ops = jump_operators(cs, jp, -580 * g)
    assert np.trace(ops.scattering_operator).real / 9 == pytest.approx(expect, rel=1e-5)


def test_jump_bookkeeping(cs, gamma2):
    # Emission into f=4 plus f=3 accounts for everything absorbed.
    ops = jump_operators(cs, D2, -580 * gamma2)
    fed = sum(W.conj().T @ W for W in ops.W.values())
    lost = sum(W.conj().T @ W for W in ops.W_loss.values())
    np.testing.assert_allclose(fed + lost, ops.scattering_operator, atol=1e-12)
    S = ops.scattering_operator
    assert np.all(np.linalg.eigvalsh(S) > -1e-14)


def test_loss_nonnegative_every_state(d2_map, rng):
    for _ in range(20):
        rho = random_density(rng)
        assert -np.trace(d2_map.apply(rho)).real >= -1e-14


def test_adjoint_consistency(d2_map, rng):
    rho = random_density(rng)
    A = rng.normal(size=(9, 9)) + 1j * rng.normal(size=(9, 9))
    lhs = np.trace(d2_map.adjoint(A) @ rho)
    rhs = np.trace(A @ d2_map.apply(rho))
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-14)


def test_positivity_over_many_small_steps(cs, gamma2, rng):
    m = larmor_average(single_atom_pumping_map(cs, D2, -580 * gamma2))
    step = sl.expm(m.matrix * 5e-4)
    v = random_density(rng).reshape(-1)
    traces = []
    for _ in range(10_000):
        v = step @ v
        if _ % 1000 == 0:
            rho = v.reshape(9, 9)
            assert np.min(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))) > -1e-12
            traces.append(np.trace(rho).real)
    assert all(b <= a + 1e-14 for a, b in zip(traces, traces[1:]))


def test_larmor_average_commutes_with_rotation(d2_map):
    avg = larmor_average(d2_map)
    for phi in (0.3, 1.7, np.pi):
        np.testing.assert_allclose(rotated_map(avg, phi).matrix, avg.matrix, atol=1e-12)


def test_larmor_average_idempotent_and_matches_numeric_mean(d2_map):
    avg = larmor_average(d2_map)
    np.testing.assert_allclose(larmor_average(avg).matrix, avg.matrix, atol=0)
    phis = np.linspace(0, 2 * np.pi, 32, endpoint=False)
    mean = sum(rotated_map(d2_map, p).matrix for p in phis) / phis.size
    np.testing.assert_allclose(mean, avg.matrix, atol=1e-12)


def test_population_sector_preserved_by_average(d2_map):
    # Diagonal (m_z) input only produces diagonal output after averaging.
    avg = larmor_average(d2_map)
    for k in range(9):
        rho = np.zeros((9, 9))
        rho[k, k] = 1
        out = avg.apply(rho)
        np.testing.assert_allclose(out - np.diag(np.diag(out)), 0, atol=1e-14)


def test_table_signs(d2_tables):
    t = d2_tables
    assert np.all(np.diag(t.T_nn) < 0)
    assert t.T_nn[1, 0] > 0
    assert abs(t.T_xx[0, 2]) > 1e-3
    assert np.all(t.loss > 0)


def test_table_column_sums_equal_leakage(d2_tables):
    np.testing.assert_allclose(d2_tables.T_nn.sum(axis=0), -d2_tables.loss, atol=1e-12)


def test_tables_require_average(d2_map):
    with pytest.raises(ValueError):
        qutrit_projected_tables(d2_map)


def test_noise_table_symmetric(d2_tables):
    np.testing.assert_allclose(d2_tables.N_table, np.swapaxes(d2_tables.N_table, 0, 1), atol=1e-12)
    # Each noise matrix, contracted with a population vector, is PSD.
    for l in range(3):
        assert np.min(np.linalg.eigvalsh(d2_tables.N_table[:, :, l])) > -1e-12


def test_choi_psd_and_trace(cs, gamma2):
    ops = jump_operators(cs, D2, -580 * gamma2)
    ch = choi_matrix(ops)
    np.testing.assert_allclose(ch, ch.conj().T, atol=1e-14)
    assert np.min(np.linalg.eigvalsh(ch)) > -1e-12
    fed = sum(np.trace(W.conj().T @ W) for W in ops.W.values())
    assert np.trace(ch).real == pytest.approx(fed.real, rel=1e-12)


def test_two_color_tables_additive(cs, nominal_probe):
    tot = two_color_tables(cs, nominal_probe)
    parts = [color_tables(cs, c.jp, c.delta).scaled(nominal_probe.gamma[n])
             for n, c in (("D1", nominal_probe.d1), ("D2", nominal_probe.d2))]
    np.testing.assert_allclose(tot.T_nn, parts[0].T_nn + parts[1].T_nn, rtol=1e-12)
    gen = averaged_map_generator(cs, nominal_probe)
    rho = np.eye(9) / 9
    loss = -np.trace((gen @ rho.reshape(-1)).reshape(9, 9)).real
    assert loss > 0


@settings(max_examples=20, deadline=None)
@given(st.floats(-3000, -100))
def test_tables_real_across_detunings(cs, gamma2, ratio):
    t = color_tables(cs, D2, ratio * gamma2)
    assert np.all(np.isfinite(t.T_nn)) and np.all(np.diag(t.T_nn) < 0)
