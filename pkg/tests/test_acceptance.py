"""Acceptance criteria, one test each.

Every test records its outcome in ``ACCEPTANCE`` so the terminal summary
prints a PASS/FAIL line per criterion, including the expected failures.
"""
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE
from qndspin.analysis import chi2_variance_test, measurement_pairs
from qndspin.atomic import effective_CK
from qndspin.config import validate_config
from qndspin.dynamics import evolve_deterministic
from qndspin.geometry import CloudGeometry, build_overlap_tables, make_basis
from qndspin.oracle import compare_gaussian_vs_exact
from qndspin.pipelines import build_model, run_pipeline
from qndspin.probe import D1, D2, optimize_design
from qndspin.pumping import averaged_map_generator, two_color_tables
from qndspin.trajectories import empty_trap_records


def record(key, ok, detail):
    ACCEPTANCE[key] = (bool(ok), detail)
    print(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")


def db(x):
    return 10 * np.log10(x)


def test_criterion_1_vector_coefficient_limits(cs):
    t0 = time.perf_counter()
    errs = []
    for jp, sign in ((D1, 1), (D2, -1)):
        span = cs.manifold(jp).span
        for k in (100, 300, 1000):
            for dsign in (1, -1):
                c1 = effective_CK(cs, jp, 1, dsign * k * span)
                errs.append(abs(c1 - sign / 12) / (1 / 12))
    elapsed = time.perf_counter() - t0
    ok = max(errs) < 0.01 and elapsed < 1.0
    record(1, ok, f"max relative deviation from +-1/12 = {max(errs):.2e}, {elapsed:.2f} s")
    assert ok


@pytest.mark.xfail(strict=True, reason="two-color r^2/r_max^2 exceeds 1 with the Cs line data; see ledger")
def test_criterion_2_design_point(cs, gamma2):
    t0 = time.perf_counter()
    dp = optimize_design(cs, -580 * gamma2, n_grid=60)
    elapsed = time.perf_counter() - t0
    ratio = abs(dp.signed_delta_ratio)
    parts = (0.90 <= dp.r_squared <= 0.97, 0.8 <= ratio <= 1.25, 0.15 <= dp.power_ratio <= 0.25, elapsed < 60)
    record(2, all(parts), f"(r/r_max)^2 = {dp.r_squared:.4f}, |D1/D2| = {ratio:.4f}, "
                          f"P1/P2 = {dp.power_ratio:.4f}, {elapsed:.1f} s")
    assert parts[1] and parts[2] and parts[3]
    assert parts[0]


@pytest.mark.xfail(strict=True, reason="single-atom decay at the 35 us anchor misses the targets; see ledger")
def test_criterion_3_mean_spin_decay(nominal_cfg, tmp_path):
    t0 = time.perf_counter()
    art = run_pipeline("fig1c", nominal_cfg, tmp_path)
    elapsed = time.perf_counter() - t0
    vals = {k.removeprefix("fig1c_"): v["value"] for k, v in art.checks.items()}
    ok = all(v["pass"] for v in art.checks.values()) and elapsed < 300
    record(3, ok, ", ".join(f"{k} = {v:.3f}" for k, v in vals.items()) + f" (targets 0.94/0.62/0.88), {elapsed:.0f} s")
    assert ok


def test_criterion_4_pure_qnd_closed_form(nominal_cfg):
    T = 120e-6
    base = build_model(nominal_cfg, n_slices=1, p_max=0, l_max=0, pumping=False)
    V0 = base.engine.fz_var(base.state.C)
    worst = 0.0
    for r in (0.1, 1.0, 3.4):
        m = build_model(nominal_cfg, n_slices=1, p_max=0, l_max=0, pumping=False, kappa=r / (T * V0))
        p = m.evolve(T)
        assert p.t[-1] == pytest.approx(T)
        worst = max(worst, abs(p.var_fz[-1] / p.var_fz[0] * (1 + r) - 1))
    ok = worst < 1e-6
    record(4, ok, f"max relative error vs 1/(1+r) = {worst:.1e}")
    assert ok


def test_criterion_5_projection_noise_scale(nominal_cfg, tmp_path):
    art = run_pipeline("fig2", nominal_cfg, tmp_path)
    s = art.summary
    parts = {k: art.checks[k]["pass"] for k in ("pn_over_sn_band", "thermal_ratio_analytic", "thermal_records_chi2")}
    ok = all(parts.values())
    record(5, ok, f"PN/SN = {s['pn_over_sn_dB']:.2f} dB (model {s['pn_over_sn_model_dB']:.2f} dB), "
                  f"thermal/CS = {s['thermal_model_ratio']:.12f}, thermal records z = "
                  f"{art.checks['thermal_records_chi2']['z']:.2f}")
    assert ok, parts


def test_criterion_6_squeezing_curve(nominal_cfg, tmp_path):
    art = run_pipeline("fig3", nominal_cfg, tmp_path)
    s = art.summary
    ok = all(c["pass"] for c in art.checks.values())
    record(6, ok, f"min xi_m^2 = {s['min_xi_m2_dB']:.2f} dB at {s['T_min_model'] * 1e6:.0f} us, "
                  f"records {s['min_xi2_records_dB']:.2f} dB at {s['T_min_records'] * 1e6:.0f} us, "
                  f"max |z| = {s['max_z']:.2f}")
    assert ok, art.checks


def test_criterion_7_oracle_equivalence(cs, nominal_probe):
    t0 = time.perf_counter()
    G9 = averaged_map_generator(cs, nominal_probe)
    tables = two_color_tables(cs, nominal_probe)
    T = 35e-6
    errs, corrs = [], []
    for beta, kind in (([1.0], "full"), ([1.0, 0.7], "qutrit"), ([1.0, 0.8, 0.6], "qutrit")):
        beta = np.array(beta)
        kappa = 0.2 / (T * 2 * np.sum(beta**2))
        rep = compare_gaussian_vs_exact(G9, tables, beta, kappa, T, 8, 1, kind, nominal_probe.gamma_total)
        errs.append(rep.max_rel_var_error)
        corrs.append(rep.mean_correlation)
    elapsed = time.perf_counter() - t0
    ok = max(errs) < 0.02 and min(corrs) > 0.99 and elapsed < 120
    record(7, ok, f"max variance error = {max(errs):.2%}, min mean correlation = {min(corrs):.6f}, {elapsed:.0f} s")
    assert ok


def test_criterion_8_numerical_hygiene(nominal_cfg, cs):
    lam = cs.manifold(D2).wavelength
    cloud = CloudGeometry(1.0, nominal_cfg.w_perp, nominal_cfg.w_z)
    b1 = make_basis(nominal_cfg.waist, lam, cloud, n_slices=4)
    b2 = make_basis(nominal_cfg.waist, lam, cloud, n_slices=4, n_radial=128, n_angular=256)
    t1, t2 = build_overlap_tables(b1), build_overlap_tables(b2)
    quad = max(np.max(np.abs(t1.c - t2.c)), np.max(np.abs(t1.g - t2.g)))

    def peak(model, dt=None):
        p = evolve_deterministic(model.state, model.engine, 300e-6, dt or model.dt)
        return db(p.xi_m_sq.min())

    ref_model = build_model(nominal_cfg)
    ref = peak(ref_model)
    d_slices = abs(peak(build_model(nominal_cfg, n_slices=2 * nominal_cfg.n_slices)) - ref)
    d_modes = abs(peak(build_model(nominal_cfg, p_max=nominal_cfg.p_max + 1, l_max=nominal_cfg.l_max + 1)) - ref)
    d_dt = abs(peak(ref_model, ref_model.dt / 2) - ref)

    T = nominal_cfg.window_T
    empty = empty_trap_records(ref_model.kappa, 2 * T, ref_model.dt, 1000, nominal_cfg.base_seed + 7919)
    sn = np.concatenate(measurement_pairs(empty, ref_model.dt, T))
    chi_ok, z = chi2_variance_test(sn, T / ref_model.kappa)

    ok = quad < 1e-8 and d_slices < 0.2 and d_modes < 0.2 and d_dt < 0.05 and chi_ok
    record(8, ok, f"quadrature {quad:.1e}, slices {d_slices:.3f} dB, modes {d_modes:.3f} dB, "
                  f"dt {d_dt:.1e} dB, empty-trap z = {z:.2f}")
    assert ok
