import math

import numpy as np
import pytest
from scipy import integrate, stats

from kelly_lab.expectation import (GaussHermite, IntegrationError, MonteCarlo, approx_error_bound,
                                   approx_expectation, approx_expectation_correlated, default_method,
                                   finite_difference_hessian, fourth_derivative_max,
                                   gauss_expectation_1d, growth_hessian, growth_stats, universe_nodes)
from kelly_lab.model import AssetUniverse, PortfolioViolation


def quad_oracle(g, m, D):
    s = math.sqrt(D)
    f = lambda x: g(x) * stats.norm.pdf(x, m, s)
    return integrate.quad(f, m - 12 * s, m + 12 * s, epsabs=1e-14, epsrel=1e-13, limit=200)[0]


@pytest.mark.parametrize("g, m, D, expected", [
    (lambda x: np.ones_like(x), 0.3, 0.2, 1.0),
    (lambda x: x, 0.3, 0.2, 0.3),
    (np.exp, 0.1, 0.04, math.exp(0.12)),
])
def test_gauss_expectation_examples(g, m, D, expected):
    assert gauss_expectation_1d(g, m, D) == pytest.approx(expected, rel=1e-13)


@pytest.mark.parametrize("q", [0.0, 0.3, 0.9])
@pytest.mark.parametrize("m, D", [(0.0, 0.04), (0.2, 0.25), (-0.3, 1.0)])
def test_quadrature_matches_adaptive_oracle(q, m, D):
    g = lambda x: np.log1p(q * np.expm1(x))
    assert gauss_expectation_1d(g, m, D) == pytest.approx(quad_oracle(g, m, D), abs=1e-12)


def test_monte_carlo_within_standard_error():
    g = np.exp
    exact = math.exp(0.1 + 0.02)
    vals = [gauss_expectation_1d(g, 0.1, 0.04, MonteCarlo(20_000, seed=s)) for s in range(20)]
    assert abs(np.mean(vals) - exact) < 1e-3
    assert gauss_expectation_1d(g, 0.1, 0.04, MonteCarlo(20_000, 3)) == gauss_expectation_1d(g, 0.1, 0.04, MonteCarlo(20_000, 3))


@pytest.mark.parametrize("kwargs", [dict(n_samples=100, seed=1), dict(n_samples=10_001, seed=1)])
def test_monte_carlo_validation(kwargs):
    with pytest.raises(ValueError):
        MonteCarlo(**kwargs)


def test_quadrature_order_validation():
    with pytest.raises(ValueError):
        GaussHermite(8)


def test_default_method_needs_seed_for_many_assets():
    assert isinstance(default_method(4), GaussHermite)
    assert isinstance(default_method(5, seed=1), MonteCarlo)
    with pytest.raises(ValueError):
        default_method(5)


def test_non_finite_integrand_raises():
    with pytest.raises(IntegrationError), np.errstate(invalid="ignore"):
        gauss_expectation_1d(lambda x: np.log(x), 0.0, 1.0)


def test_approx_expectation_examples():
    # central difference with h = sqrt(D)/100 carries an h^2/12 relative error
    assert approx_expectation(np.exp, 0.0, 0.1) == pytest.approx(1.05, abs=1e-7)
    assert approx_expectation(np.exp, 0.0, 0.1, g2=np.exp) == 1.05
    assert approx_expectation(lambda x: 3 * x + 1, 0.4, 0.3) == pytest.approx(2.2, abs=1e-9)
    # q = 0: g = e^x - 1, g'' = e^x
    m, D = 0.07, 0.09
    assert approx_expectation(np.expm1, m, D) == pytest.approx(np.expm1(m) + D / 2 * np.exp(m), rel=1e-6)


def test_approx_error_within_bound():
    err = abs(approx_expectation(np.exp, 0.0, 0.1) - math.exp(0.05))
    M = fourth_derivative_max(np.exp, -0.2, 0.2)
    assert err == pytest.approx(1.27e-3, abs=1e-5)
    assert err <= approx_error_bound(M, 0.1)


@pytest.mark.parametrize("M, D, expected", [(0.0, 0.3, 0.0), (8.0, 0.1, 0.01)])
def test_error_bound_formula(M, D, expected):
    assert approx_error_bound(M, D) == pytest.approx(expected, abs=1e-15)


def test_fourth_derivative_estimate():
    assert fourth_derivative_max(np.sin, 0, math.pi) == pytest.approx(1.0, rel=1e-4)
    assert fourth_derivative_max(lambda x: x**3, -1, 1) == pytest.approx(0.0, abs=1e-4)


def test_correlated_expansion():
    S = np.array([[0.01, 0.005], [0.005, 0.01]])
    g = lambda x: math.exp(x[0] + x[1])
    got = approx_expectation_correlated(g, [0, 0], S, hessian=np.ones((2, 2)))
    assert got == pytest.approx(1.015, abs=1e-15)
    assert approx_expectation_correlated(g, [0, 0], S) == pytest.approx(1.015, abs=1e-7)
    assert abs(got - math.exp(0.015)) < 2e-4


def test_correlated_reduces_to_separable_sum():
    m, D = np.array([0.1, -0.2]), np.array([0.04, 0.09])
    g = lambda x: float(np.sum(np.exp(x)))
    total = approx_expectation_correlated(g, m, np.diag(D))
    parts = sum(approx_expectation(np.exp, mi, di) for mi, di in zip(m, D))
    assert total == pytest.approx(parts, rel=1e-7)


def test_correlated_exact_for_quadratic():
    A = np.array([[2.0, 0.5], [0.5, 1.0]])
    g = lambda x: float(x @ A @ x)
    S = np.array([[0.3, 0.1], [0.1, 0.2]])
    m = np.array([0.4, -0.1])
    exact = m @ A @ m + np.trace(A @ S)
    assert approx_expectation_correlated(g, m, S, hessian=lambda x: 2 * A) == pytest.approx(exact, rel=1e-14)
    assert approx_expectation_correlated(g, m, S) == pytest.approx(exact, rel=1e-6)


def test_fd_hessian():
    H = finite_difference_hessian(lambda x: x[0] ** 2 * x[1] + x[1] ** 3, np.array([1.0, 2.0]))
    np.testing.assert_allclose(H, [[4, 2], [2, 12]], atol=1e-6)


def test_growth_stats_cash_and_single_asset():
    u = AssetUniverse.from_params([0.1, -0.05], [0.04, 0.09])
    s = growth_stats([0, 0], u)
    assert (s.v, s.v2) == (0.0, 0.0)
    np.testing.assert_allclose(s.grad, u.mu, rtol=1e-12)
    s = growth_stats([1, 0], u)
    assert s.v == pytest.approx(0.1, abs=1e-14)
    assert s.v2 == pytest.approx(0.1**2 + 0.04, abs=1e-14)
    assert s.var == pytest.approx(0.04, abs=1e-14)


def test_growth_gradient_vanishes_at_half():
    u = AssetUniverse.from_params([0.0], [0.04])
    assert abs(growth_stats([0.5], u).grad[0]) < 1e-15


def test_growth_gradient_and_hessian_match_finite_differences():
    u = AssetUniverse.from_params([0.1, 0.15, 0.2], [0.04, 0.09, 0.25])
    nodes = universe_nodes(u)
    q = np.array([0.2, 0.3, 0.4])
    v = lambda x: growth_stats(x, u, nodes=nodes).v
    h = 1e-6
    fd = [(v(q + h * e) - v(q - h * e)) / (2 * h) for e in np.eye(3)]
    np.testing.assert_allclose(growth_stats(q, u, nodes=nodes).grad, fd, atol=1e-9)
    g = lambda x: growth_stats(x, u, nodes=nodes).grad
    fdH = np.array([(g(q + h * e) - g(q - h * e)) / (2 * h) for e in np.eye(3)])
    np.testing.assert_allclose(growth_hessian(q, u, nodes), fdH, atol=1e-8)


def test_growth_single_asset_matches_oracle():
    u = AssetUniverse.from_params([0.05], [0.3])
    g = lambda x: np.log1p(0.7 * np.expm1(x))
    assert growth_stats([0.7], u).v == pytest.approx(quad_oracle(g, 0.05, 0.3), abs=1e-12)


def test_growth_correlated_quadrature_vs_mc():
    S = [[0.04, 0.03], [0.03, 0.09]]
    u = AssetUniverse.from_params([0.1, 0.15], [0.04, 0.09], covariance=S)
    q = [0.4, 0.5]
    exact = growth_stats(q, u)
    mc = growth_stats(q, u, MonteCarlo(200_000, seed=7))
    assert abs(mc.v - exact.v) < 4 * mc.v_stderr
    assert mc.v_stderr > 0


def test_growth_stats_rejects_infeasible():
    u = AssetUniverse.from_params([0.1], [0.04])
    with pytest.raises(PortfolioViolation):
        growth_stats([1.5], u)
