import numpy as np
import pytest
from hypothesis import given, strategies as st

from shelab.appell import (AppellError, aligned_grid, dual_simulation_check, gaussian_exponent, make_params,
                           norm_identity_check, source_grid_for, transform_coefficients, transform_field,
                           transform_values, transformed_initial)
from shelab.coefficients import CoefficientSpec, cosine, decaying, estimate_bounds, zero
from shelab.grid import Field, make_grid
from shelab.solver import SolverConfig, solve_batch, solve_path
from shelab.stochastic import SeedLadder, TimeGrid, sample_increments, sample_path

pos = st.floats(0.05, 20)
unit = st.floats(0, 1)
NOISY = CoefficientSpec(cosine(0.5), decaying(0.15, 0.5))


def gauss(x):
    return np.exp(-np.sum(x * x, axis=0))


def test_identity_params():
    p = make_params(2.0, 2.0)
    t = np.linspace(0, 1, 11)
    assert p.kappa == 0 and p.is_identity
    np.testing.assert_array_equal(p.a(t), 1.0)
    np.testing.assert_allclose(p.b(t), t, rtol=1e-15)


def test_gamma_one_params():
    p = make_params(1.0, 5.0)
    assert p.kappa == pytest.approx(-4 / np.sqrt(5), rel=1e-14)
    assert p.a(0.5) == pytest.approx(np.sqrt(5) / 3, rel=1e-14)
    assert p.b(0.5) == pytest.approx(5 / 6, rel=1e-14)


@pytest.mark.parametrize("args", [(0.0, 1.0), (1.0, -2.0)])
def test_make_params_rejects(args):
    with pytest.raises(AppellError):
        make_params(*args)


@given(pos, pos)
def test_clock_endpoints(alpha, beta):
    p = make_params(alpha, beta)
    assert abs(p.b(0.0)) <= 1e-15 and abs(p.b(1.0) - 1) <= 1e-12


@given(pos, pos, st.lists(st.floats(0.01, 0.99), min_size=1, max_size=20))
def test_derivative_identities(alpha, beta, ts):
    p = make_params(alpha, beta)
    t = np.array(ts)
    h = 1e-4
    five = lambda f: (8 * (f(t + h) - f(t - h)) - (f(t + 2 * h) - f(t - 2 * h))) / (12 * h)
    scale = max(1.0, float(p.max_scale) ** 3 * max(1.0, abs(p.kappa)) ** 3)
    assert np.max(np.abs(five(p.a) - p.kappa * p.a(t) ** 2)) <= 1e-8 * scale
    assert np.max(np.abs(five(p.b) - p.a(t) ** 2)) <= 1e-8 * scale


@given(pos, pos, unit)
def test_reciprocity_through_inverse(alpha, beta, t):
    p = make_params(alpha, beta)
    assert abs(p.a(t) * p.inverse().a(p.b(t)) - 1) <= 1e-10
    assert abs(p.a(t) * p.a(1 - p.b(t)) - 1) <= 1e-10
    assert abs(p.inverse().b(p.b(t)) - t) <= 1e-10


@pytest.mark.xfail(strict=True, reason="a(t) a(b(t)) = 1 only holds when alpha = beta")
def test_reciprocity_literal_reading():
    p = make_params(1.0, 5.0)
    t = np.linspace(0.1, 0.9, 9)
    np.testing.assert_allclose(p.a(t) * p.a(p.b(t)), 1.0, atol=1e-10)


@given(pos, pos)
def test_clock_strictly_increasing(alpha, beta):
    p = make_params(alpha, beta)
    assert np.all(np.diff(p.b(np.linspace(0, 1, 10001))) > 0)


@given(pos, pos)
def test_kappa_antisymmetric(alpha, beta):
    assert make_params(alpha, beta).kappa == pytest.approx(-make_params(beta, alpha).kappa, abs=1e-14)
    assert (make_params(alpha, beta).kappa == 0) == (alpha == beta)


@given(st.floats(0.05, 5))
def test_endpoint_exponents(gamma):
    p = make_params(1.0, 1 + 4 * gamma)
    assert abs(gaussian_exponent(p, gamma, 0.0)) <= 1e-10 * max(1, gamma)
    delta = 1 / (2 * gamma)
    assert gaussian_exponent(p, gamma, 1.0) == pytest.approx(1 / delta**2, rel=1e-12)


def _traj(g, params=None, K=40):
    clock = params.clock() if params else None
    cfg = SolverConfig(TimeGrid(K), 0.5, (0.0, 0.25, 0.5, 0.75, 1.0)) if clock is None else \
        SolverConfig(TimeGrid(K), 0.5, (0.0, 0.25, 0.5, 0.75, 1.0), clock=clock)
    path = sample_path(3, TimeGrid(K), cfg.clock)
    return solve_path(Field.from_function(g, gauss), NOISY, path, cfg)


def test_transform_field_identity_exact():
    g = make_grid(1, 6.0, 97)
    traj = _traj(g)
    p = make_params(1.3, 1.3)
    assert np.array_equal(transform_field(traj, p, 0.5).values, traj.at(0.5).values)


def test_transform_field_at_zero():
    g = make_grid(1, 6.0, 241)
    p = make_params(1.0, 5.0)
    traj = _traj(g, p)
    y = transform_field(traj, p, 0.0).values
    a0 = np.sqrt(5.0)
    x = g.axis
    expected = a0**0.5 * np.exp(-(a0 * x) ** 2) * np.exp(a0 * p.kappa * x**2 / 4)
    expected[np.abs(a0 * x) > 6.0] = 0
    expected[[0, -1]] = 0
    assert np.max(np.abs(y - expected)) <= 1e-4


def test_transform_then_inverse_recovers_field():
    g = make_grid(1, 6.0, 481)
    p = make_params(1.0, 3.0)
    t = 0.4
    s = float(p.b(t))
    u = gauss(g.coords)
    u[[0, -1]] = 0
    a = float(p.a(t))
    y, _ = transform_values(u[None], g, p, t)
    exact_y = a**0.5 * np.exp(-(a * g.axis) ** 2 + a * p.kappa * g.axis**2 / 4)
    keep = np.abs(a * g.axis) < 5.9
    e1 = np.max(np.abs(y[0] - exact_y)[keep & g.interior])
    keep_back = (np.abs(g.axis / a) < 5.9) & g.interior
    # single-leg interpolation error of the inverse, fed the exact forward field
    exact_y[[0, -1]] = 0
    leg, _ = transform_values(exact_y[None], g, p.inverse(), s)
    e1b = np.max(np.abs(leg[0] - u)[keep_back])
    back, _ = transform_values(y, g, p.inverse(), s)
    e2 = np.max(np.abs(back[0] - u)[keep_back])
    assert e2 <= 2 * max(e1, e1b) + 1e-12


def test_identity_norm_check_exact():
    g = make_grid(1, 6.0, 97)
    traj = _traj(g)
    from shelab.solver import Ensemble
    ens = Ensemble(g, traj.times, np.stack([f.values for _, f in traj.checkpoints])[None], None)
    rep = norm_identity_check(ens, make_params(2.0, 2.0), 0.3, 0.5)
    assert rep.relative_discrepancy <= 1e-12 and rep.verdict == "PASS"


def test_norm_identity_gamma_zero_small_ensemble():
    target = make_grid(1, 8.0, 257)
    p = make_params(1.0, 5.0)
    src = source_grid_for(target, p)
    cps = (0.0, 0.25, 0.5, 0.75, 1.0)
    tg = TimeGrid(200)
    seeds = SeedLadder(9).derive_many(np.arange(40))
    ens = solve_batch(gauss(src.coords), NOISY, sample_increments(seeds, tg, p.clock()), src,
                      SolverConfig(tg, 0.5, cps, clock=p.clock()), seeds)
    for t in (0.25, 0.5, 0.75):
        rep = norm_identity_check(ens, p, 0.0, t, target)
        assert rep.verdict == "PASS" and not rep.degraded


def test_aligned_grid_maps_nodes():
    g = make_grid(1, 8.0, 65)
    p = make_params(1.0, 5.0)
    tg = aligned_grid(g, p, 0.3)
    np.testing.assert_allclose(float(p.a(0.3)) * tg.axis, g.axis, atol=1e-12)


def test_transform_coefficients_zero_and_identity():
    g = make_grid(1, 8.0, 65)
    tp = transform_coefficients(CoefficientSpec(zero(), zero()), make_params(1.0, 5.0), g)
    assert (tp.bounds.M, tp.bounds.M0, tp.bounds.M1) == (0, 0, 0)
    tp = transform_coefficients(NOISY, make_params(1.5, 1.5), g)
    rng = np.random.default_rng(0)
    x = rng.uniform(-8, 8, size=(1, 100))
    for t in rng.uniform(0, 1, 5):
        np.testing.assert_allclose(tp.spec.V(t, x), NOISY.V(t, x), rtol=1e-15)
        np.testing.assert_allclose(tp.spec.G(t, x), NOISY.G(t, x), rtol=1e-15)


@pytest.mark.parametrize("spec", [NOISY, CoefficientSpec(cosine(0.3, 2.0), decaying(0.5, 0.5))])
def test_transformed_bounds_scale(spec):
    g = make_grid(1, 8.0, 257)
    gamma = 1.0
    tp = transform_coefficients(spec, make_params(1.0, 1 + 4 * gamma), g)
    b = estimate_bounds(spec, g)
    k = 1 + 4 * gamma
    r = 1 + 1e-12  # the bounds are attained, so allow rounding
    assert tp.bounds.M <= k * b.M * r and tp.bounds.M0 <= np.sqrt(k) * b.M0 * r and tp.bounds.M1 <= k * b.M1 * r
    assert tp.bounds_consistent()


def test_transformed_initial_is_transform_at_zero():
    g = make_grid(1, 6.0, 241)
    p = make_params(1.0, 5.0)
    direct = transformed_initial(gauss, p, g)
    via, _ = transform_values(gauss(source_grid_for(g, p).coords)[None], source_grid_for(g, p), p, 0.0, g)
    assert np.max(np.abs(direct - via[0])) <= 1e-4


def test_dual_identity_pathwise():
    g = make_grid(1, 6.0, 97)
    rep = dual_simulation_check(NOISY, make_params(1.0, 1.0), gauss, g, 40, 8, 5, aligned_seeds=True)
    assert rep.max_pathwise_discrepancy <= 1e-10 and rep.verdict == "PASS"


def test_dual_free_heat():
    g = make_grid(1, 8.0, 257)
    rep = dual_simulation_check(CoefficientSpec(zero(), zero()), make_params(1.0, 5.0), gauss, g, 400, 1, 5,
                                rel_floor=1e-3)
    assert rep.verdict == "PASS"
    for row in rep.rows:
        assert abs(row["direct_mean"] - row["transformed_mean"]) <= 1e-3 * row["direct_mean"]
