import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from shelab.functionals import INCONCLUSIVE, PASS, PreconditionError
from shelab.grid import make_grid
from shelab.solver import Ensemble
from shelab.thresholds import (BRANCH_POINT, DIVERGENT, FINITE, ThresholdError, ThresholdTable, alpha_gamma,
                               alpha_gamma_branches, alpha_root, balance_point, check_mu_window, decay_exponent,
                               decay_slope, final_comparison, g_condition_check, hardy_heat_oracle, local_mass,
                               m_mu, m_mu_branches, m_mu_bruteforce, noise_bound, root_residual,
                               uniqueness_decay_check, uniqueness_sweep)

above_half = st.floats(0.5001, 10.0)


def test_branch_point_continuity():
    b1, b2 = alpha_gamma_branches(BRANCH_POINT)
    assert abs(b1 - b2) <= 1e-12
    m1, m2 = m_mu_branches(BRANCH_POINT)
    assert abs(m1 - m2) <= 1e-12 and abs(m2 - 0.25) <= 1e-12


@given(above_half)
def test_selected_branch_is_the_larger(g):
    assert alpha_gamma(g) == pytest.approx(max(alpha_gamma_branches(g)), abs=1e-15)
    assert alpha_gamma(g) > 0.25


def test_alpha_gamma_examples():
    assert alpha_gamma(1.0) == pytest.approx(3 / 8 + np.sqrt(11) / 16, abs=1e-15)
    assert alpha_gamma(1.0) == pytest.approx(0.58229, abs=1e-5)
    assert alpha_gamma(2.0) == pytest.approx(0.25 + (1 + np.sqrt(33)) / 64, abs=1e-15)
    assert alpha_gamma(2.0) == pytest.approx(0.355384, abs=1e-6)


@pytest.mark.parametrize("fn", [alpha_gamma, noise_bound, m_mu, alpha_root])
def test_reject_at_or_below_half(fn):
    with pytest.raises(ThresholdError):
        fn(0.5)


def test_noise_bound_examples():
    assert noise_bound(0.5001) < 1e-3
    assert noise_bound(1.0) == pytest.approx(3 / (40 * alpha_gamma(1.0)), rel=1e-14)
    assert noise_bound(1.0) == pytest.approx(0.12880, abs=1e-5)


@given(above_half)
def test_final_comparison(g):
    four_g, rhs = final_comparison(g)
    assert four_g > rhs


@given(st.floats(0.5001, 1e3))
def test_noise_bound_positive_and_below_half(g):
    assert 0 < noise_bound(g) < 0.5


def test_noise_bound_limits():
    assert noise_bound(0.5001) < 1e-3
    # alpha_gamma tends to 1/4, so the bound tends to 1/2 for large gamma
    assert noise_bound(1e3) == pytest.approx(0.5, abs=1e-3)
    gs = np.linspace(0.5001, 50, 500)
    assert np.all(np.diff([noise_bound(g) for g in gs]) > 0)


@pytest.mark.xfail(strict=True, reason="the bound tends to 1/2, not 0, as gamma grows")
def test_noise_bound_vanishes_for_large_gamma():
    assert noise_bound(1e3) < 1e-3


def test_m_mu_examples():
    assert m_mu(2.0) == 0.25
    assert m_mu(1.0) == 5 / 16
    assert abs(m_mu_bruteforce(1.0) - 5 / 16) <= 1e-6


@given(st.floats(0.5001, 10.0))
def test_m_mu_bruteforce(mu):
    assert abs(m_mu(mu) - m_mu_bruteforce(mu)) <= 1e-6


def test_m_mu_bruteforce_hundred_random():
    rng = np.random.default_rng(1)
    for mu in rng.uniform(0.5001, 10, 100):
        assert abs(m_mu(mu) - m_mu_bruteforce(mu)) <= 1e-6


def test_alpha_root_examples():
    assert alpha_root(1.0) == pytest.approx((6 + np.sqrt(11)) / 16, abs=1e-15)
    assert alpha_root(2.0) == pytest.approx((17 + np.sqrt(33)) / 64, abs=1e-15)
    assert abs(alpha_root(1.0) - alpha_gamma(1.0)) <= 1e-12
    assert abs(alpha_root(2.0) - alpha_gamma(2.0)) <= 1e-12


@given(above_half)
def test_alpha_root_properties(mu):
    a = alpha_root(mu)
    assert a > m_mu(mu)
    assert abs(root_residual(mu)) <= 1e-12
    assert abs(alpha_root(mu) - alpha_gamma(mu)) <= 1e-12


def test_g_condition_zero_noise():
    a = alpha_root(1.0)
    rep = g_condition_check(1.0, a, m_mu(1.0), 0.0)
    assert rep.direct and rep.sufficient and rep.verdict == PASS


@pytest.mark.parametrize("mu", [0.6, 0.9, 1.0, 2.0, 5.0])
def test_g_condition_implication_scan(mu):
    a, m = alpha_root(mu), m_mu(mu)
    direct = g_condition_check(mu, a, m, 0.0).direct_bound
    for M0 in np.linspace(0, 2 * np.sqrt(max(direct, 4 * mu)), 100):
        rep = g_condition_check(mu, a, m, M0)
        assert rep.implication_holds
    if direct > 4 * mu:
        mid = np.sqrt(0.5 * (direct + 4 * mu))
        assert g_condition_check(mu, a, m, mid).direct


def test_g_condition_direct_bound_at_root():
    # with (alpha - m)^2 = alpha / (8 mu^2) the direct bound reduces to 4 mu
    for mu in (0.7, 1.0, 3.0):
        rep = g_condition_check(mu, alpha_root(mu), m_mu(mu), 0.0)
        assert rep.direct_bound == pytest.approx(4 * mu, rel=1e-12)


# ---- Hardy oracle ----

def test_hardy_finite_example():
    r = hardy_heat_oracle(1.0, 3.0, L=6.0)
    assert r.verdict == FINITE and abs(r.growth - 1) <= 0.01


def test_hardy_divergent_example():
    r = hardy_heat_oracle(1.0, 2.0, L=4.0)
    assert r.verdict == DIVERGENT and r.growth >= 10
    assert r.rate == pytest.approx(2 / 4 - 2 / 5, rel=1e-14)


def test_hardy_large_delta_finite():
    for beta in (0.5, 1.0, 3.0):
        assert hardy_heat_oracle(beta, 1e6).verdict == FINITE


def test_hardy_rejects():
    with pytest.raises(ThresholdError):
        hardy_heat_oracle(0.0, 1.0)


@given(st.floats(0.2, 4), st.floats(0.2, 10))
def test_hardy_rule(beta, delta):
    r = hardy_heat_oracle(beta, delta, L=1.0)
    assert (r.verdict == FINITE) == (delta**2 > beta**2 + 4)
    assert (r.rate < 0) == (r.verdict == FINITE)


def test_hardy_two_dimensional_norm_is_square():
    r1 = hardy_heat_oracle(1.0, 3.0, L=3.0, dim=1)
    r2 = hardy_heat_oracle(1.0, 3.0, L=3.0, dim=2)
    assert r2.norm_L == pytest.approx(r1.norm_L**2, rel=1e-12)


# ---- table ----

def test_table_from_delta_and_json():
    t = ThresholdTable.from_delta(0.5, mus=(0.9,))
    assert t.gamma == 1.0 and t.hardy_delta_threshold == 2.0
    d = json.loads(t.to_json())
    assert d["noise_bound"] == pytest.approx(0.12880, abs=1e-5)
    assert d["mu"][0]["m_mu"] == pytest.approx(m_mu(0.9))
    assert d["final_comparison"]["holds"]


@given(st.floats(0.01, 0.999))
def test_small_delta_gives_gamma_above_half(delta):
    assert ThresholdTable.from_delta(delta).gamma > 0.5


def test_standard_scenario_values():
    mu = 0.9
    assert alpha_root(mu) == pytest.approx(0.678530, abs=1e-6)
    assert m_mu(mu) == pytest.approx((4 * mu + 1) / (16 * mu * mu), rel=1e-15)
    assert m_mu(mu) == pytest.approx(0.354938, abs=1e-6)


# ---- uniqueness mechanism ----

def test_mu_window():
    check_mu_window(0.9, 0.25, 1.0)
    with pytest.raises(PreconditionError):
        check_mu_window(0.6, 0.25, 1.0)
    with pytest.raises(PreconditionError):
        check_mu_window(1.0, 0.25, 1.0)
    with pytest.raises(PreconditionError):
        check_mu_window(0.9, 1.0, 1.0)


def _zero_ens():
    g = make_grid(1, 8.0, 65)
    return Ensemble(g, np.array([0.0, 0.5, 1.0]), np.zeros((4, 3) + g.shape), None)


def test_zero_data_passes():
    table = ThresholdTable(1.0, (0.9,))
    rep = uniqueness_decay_check(_zero_ens(), 0.9, 4.0, 0.25, table, 0.3, 1.0)
    assert rep.lhs == 0.0 and rep.verdict == PASS


def test_infinite_rhs_is_inconclusive():
    table = ThresholdTable(1.0, (0.9,))
    rep = uniqueness_decay_check(_zero_ens(), 0.9, 4.0, 0.25, table, 0.3, float("inf"))
    assert rep.verdict == INCONCLUSIVE


def test_local_mass_ball():
    g = make_grid(1, 4.0, 81)
    vals = np.ones((1,) + g.shape)
    # indicator quadrature is accurate to one mesh cell
    assert abs(local_mass(vals, g, 1.0)[0] - 2.0) <= g.spacing + 1e-12


@given(st.floats(0.51, 3), st.floats(0.0, 0.3), st.floats(0, 2), st.floats(0.5, 20))
def test_exponent_is_slope_times_r2(mu, eps, M0, R):
    a = alpha_root(mu)
    assert decay_exponent(a, mu, eps, M0, R) == pytest.approx(decay_slope(a, mu, eps, M0) * R * R, rel=1e-12,
                                                               abs=1e-12)


@given(st.floats(0.7, 3), st.floats(0.0, 0.2))
def test_sign_flip_at_balance_point(mu, eps):
    a = alpha_root(mu)
    bp = balance_point(a, mu, eps)
    if bp > 0:
        assert decay_slope(a, mu, eps, np.sqrt(bp * 0.999)) < 0 < decay_slope(a, mu, eps, np.sqrt(bp * 1.001))
        assert abs(decay_slope(a, mu, eps, np.sqrt(bp))) <= 1e-12


def test_deterministic_exponent_negative():
    mu, eps = 0.9, 0.25
    for R in (2, 4, 8, 16):
        assert decay_exponent(alpha_root(mu), mu, eps, 0.0, R) == pytest.approx(
            -R * R * (4 * (1 - eps) ** 2 * mu * mu - 1) / (32 * mu), rel=1e-14)
        assert decay_exponent(alpha_root(mu), mu, eps, 0.0, R) < 0


def test_sweep_structure_on_zero_data():
    table = ThresholdTable(1.0, (0.9,))
    rep = uniqueness_sweep(_zero_ens(), 0.9, 0.25, table, 0.3, lambda R: 1.0)
    assert rep.decreasing and rep.sign_flip and rep.slope_residual <= 1e-10
    assert rep.verdict == PASS
    assert [r["R"] for r in rep.rows()] == [2.0, 4.0, 8.0, 16.0]
    assert set(rep.rows()[0]) == {"R", "lhs", "lhs_stderr", "rhs_exponent", "verdict"}


def test_sweep_above_balance_point_not_decreasing():
    table = ThresholdTable(1.0, (0.9,))
    a = alpha_root(0.9)
    M0 = np.sqrt(2 * balance_point(a, 0.9, 0.25))
    rep = uniqueness_sweep(_zero_ens(), 0.9, 0.25, table, M0, lambda R: 1.0)
    assert not rep.decreasing and rep.verdict != PASS
