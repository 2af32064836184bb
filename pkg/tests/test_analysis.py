import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qndspin.analysis import (
    bootstrap,
    chi2_variance_test,
    conditional_variance,
    covariance_estimate,
    integrate_record,
    mean_spin_decay_ratio,
    measurement_pairs,
    noise_decomposition_fit,
    squeezing_from_records,
    to_db,
    variance_sigma,
)
from qndspin.errors import DomainError
from qndspin.pipelines import build_model


def correlated(rng, rho, n):
    a, b = rng.normal(size=(2, n))
    return a, rho * a + np.sqrt(1 - rho**2) * b


def test_covariance_estimate_small_example():
    M1 = np.array([1.0, 2.0, 3.0, 4.0])
    M2 = 2 * M1
    assert covariance_estimate(M1, M2) == pytest.approx(2 * np.var(M1, ddof=1))
    assert covariance_estimate(M1, M2) == pytest.approx(np.cov(M1, M2)[0, 1])
    assert conditional_variance(M1, M2) == pytest.approx(0.0, abs=1e-12)


def test_conditional_variance_of_correlated_gaussians(rng):
    M1, M2 = correlated(rng, 0.6, 400_000)
    assert conditional_variance(M1, M2) == pytest.approx(0.64, rel=0.01)


def test_estimator_error_scales_as_inverse_root_n():
    def spread(n):
        rng = np.random.default_rng(n)
        return np.std([conditional_variance(*correlated(rng, 0.6, n)) for _ in range(300)])

    assert spread(400) / spread(1600) == pytest.approx(2.0, rel=0.25)


def test_estimator_input_errors():
    with pytest.raises(DomainError):
        covariance_estimate([1.0], [2.0])
    with pytest.raises(DomainError):
        conditional_variance([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])


@settings(max_examples=40, deadline=None)
@given(st.floats(1e-3, 1e3), st.integers(0, 2**31))
def test_squeezing_scale_invariant(c, seed):
    rng = np.random.default_rng(seed)
    M1, M2 = correlated(rng, 0.8, 200)
    a = squeezing_from_records(M1, M2, 0.1, 0.9, 0.9)
    b = squeezing_from_records(c * M1, c * M2, 0.1 * c**2, 0.9 * c**2, 0.9)
    assert b == pytest.approx(a, rel=1e-9, abs=1e-12)


def test_squeezing_orientation(rng):
    M1, M2 = correlated(rng, 0.9, 1000)
    bracket = (conditional_variance(M1, M2) - 0.05) / 0.5
    assert squeezing_from_records(M1, M2, 0.05, 0.5, 0.8) == pytest.approx(bracket * 0.8)
    assert squeezing_from_records(M1, M2, 0.05, 0.5, 0.8, "wineland") == pytest.approx(bracket / 0.8)
    with pytest.raises(DomainError):
        squeezing_from_records(M1, M2, 0.05, 0.5, 0.8, "sideways")
    with pytest.raises(DomainError):
        squeezing_from_records(M1, M2, 0.05, 0.0, 0.8)
    with pytest.raises(DomainError):
        squeezing_from_records(M1, M2, 0.05, 0.5, 0.0)


def test_decomposition_fit_recovers_linear_noise():
    N1 = np.linspace(1e5, 1e6, 6)
    sn, a = 4e-3, 1.2e-8
    fit = noise_decomposition_fit(N1, sn + a * N1, sn)
    assert fit.a == pytest.approx(a, rel=1e-9)
    assert abs(fit.b) * 1e6 < 1e-9 * a
    np.testing.assert_allclose(fit.predict(N1), sn + a * N1, rtol=1e-12)
    assert set(fit.as_dict()) >= {"a", "b", "pn", "cn", "var_sn"}


def test_decomposition_fit_quadratic_and_errors():
    N1 = np.array([1e5, 3e5, 6e5, 1e6])
    fit = noise_decomposition_fit(N1, 1e-3 + 2e-9 * N1 + 3e-15 * N1**2, 1e-3, sigma=np.full(4, 1e-5))
    assert fit.b == pytest.approx(3e-15, rel=1e-6)
    with pytest.raises(DomainError):
        noise_decomposition_fit([1.0, 1.0, 2.0], [1, 2, 3], 0.0)


def test_record_integration_windows():
    dM = np.arange(10.0)
    assert integrate_record(dM, 1.0, (0.0, 4.0)) == pytest.approx(0 + 1 + 2 + 3)
    M1, M2 = measurement_pairs(np.vstack([dM, dM]), 1.0, 5.0)
    np.testing.assert_allclose(M1, [10, 10])
    np.testing.assert_allclose(M2, [35, 35])
    with pytest.raises(DomainError):
        integrate_record(dM, 1.0, (5.0, 12.0))


def test_mean_spin_ratio_without_pumping(nominal_cfg):
    m = build_model(nominal_cfg, n_slices=3, pumping=False)
    p = m.evolve(100e-6)
    assert mean_spin_decay_ratio(p.t, p.fx, 50e-6) == pytest.approx(1.0, abs=1e-12)
    assert mean_spin_decay_ratio(p.t, p.fx, 50e-6, "start") == pytest.approx(1.0, abs=1e-12)


def test_mean_spin_ratio_monotone_with_pumping(nominal_path):
    p = nominal_path
    Ts = np.linspace(10e-6, 150e-6, 8)
    for conv in ("midpoint", "start"):
        vals = [mean_spin_decay_ratio(p.t, p.fx, T, conv) for T in Ts]
        assert all(0 < v < 1 for v in vals)
        assert all(b < a for a, b in zip(vals, vals[1:]))
    with pytest.raises(DomainError):
        mean_spin_decay_ratio(p.t, p.fx, 200e-6)


def test_bootstrap_deterministic(rng):
    M1, M2 = correlated(rng, 0.5, 300)
    a = bootstrap(conditional_variance, M1, M2, n_boot=50, seed=3)
    b = bootstrap(conditional_variance, M1, M2, n_boot=50, seed=3)
    c = bootstrap(conditional_variance, M1, M2, n_boot=50, seed=4)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    assert abs(a.mean() - conditional_variance(M1, M2)) < 4 * a.std()


def test_chi2_and_sigma(rng):
    x = rng.normal(scale=2.0, size=5000)
    assert chi2_variance_test(x, 4.0)[0]
    assert not chi2_variance_test(x, 3.0)[0]
    assert variance_sigma(x) == pytest.approx(4.0 * np.sqrt(2 / 4999), rel=0.05)
    assert to_db(10.0) == pytest.approx(10.0)
