import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kelly_lab.markowitz import (DegenerateUniverse, approx_frontier, cml_sigma, constrained_enumerate,
                                 constrained_frontier, constrained_frontier_point, ef_fractions,
                                 efficient_frontier, kelly_point, moment_sums, mv_fractions,
                                 on_frontier_residual, power_sums)
from kelly_lab.model import AssetUniverse

from conftest import random_universe


def test_power_sums_single():
    np.testing.assert_allclose(power_sums([0.1], [0.05]), (20, 2, 0.2), rtol=1e-14)


def test_fig1_moment_sums(fig1):
    ms = moment_sums(fig1)
    np.testing.assert_allclose(ms.C, (28.3024, 4.71132, 0.917687), rtol=2e-5)
    np.testing.assert_allclose(ms.C_tilde, (40.1111, 6.46667, 1.205), rtol=2e-5)
    assert float(cml_sigma(fig1, 1.0)) == pytest.approx(1 / math.sqrt(ms.C[2]))
    assert 1 / float(cml_sigma(fig1, 1.0)) == pytest.approx(0.958, abs=1e-3)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_cauchy_schwarz(n, seed):
    C = moment_sums(random_universe(np.random.default_rng(seed), n)).C
    assert C[1] ** 2 <= C[0] * C[2] * (1 + 1e-12)


def test_mv_fractions(fig1):
    np.testing.assert_array_equal(mv_fractions(fig1, 0.0), 0)
    q = mv_fractions(fig1, 0.1)
    assert q @ fig1.mu == pytest.approx(0.1, rel=1e-14)
    with pytest.raises(ValueError):
        mv_fractions(fig1, -0.1)


def test_ef_fractions_reproduce_constraints(fig1):
    for t in (0.05, 0.2, 0.4):
        q = ef_fractions(fig1, t)
        assert q.sum() == pytest.approx(1, abs=1e-13)
        assert q @ fig1.mu == pytest.approx(t, abs=1e-13)
        assert math.sqrt(np.sum(q**2 * fig1.sigma2)) == pytest.approx(float(efficient_frontier(fig1, t)), rel=1e-12)


def test_cml_tangent_to_ef(fig1):
    C0, C1, C2 = moment_sums(fig1).C
    mu = np.linspace(0.01, 1.0, 2001)
    gap = efficient_frontier(fig1, mu) - cml_sigma(fig1, mu)
    assert gap.min() >= -1e-12
    # tangency at the market portfolio mu = C2/C1
    assert float(efficient_frontier(fig1, C2 / C1)) == pytest.approx(float(cml_sigma(fig1, C2 / C1)), rel=1e-10)
    assert float(cml_sigma(fig1, 0.0)) == 0


def test_identical_assets_degenerate():
    u = AssetUniverse.from_params([0.1, 0.1], [0.04, 0.04])
    with pytest.raises(DegenerateUniverse):
        efficient_frontier(u, 0.1)


def test_constrained_endpoints(fig1):
    hi = constrained_frontier_point(fig1, fig1.mu.max())
    np.testing.assert_array_equal(hi.fractions, [0, 0, 1])
    assert hi.sigma_P == pytest.approx(math.sqrt(fig1.sigma2[2]))
    lo = constrained_frontier_point(fig1, fig1.mu.min())
    np.testing.assert_array_equal(lo.fractions, [1, 0, 0])
    with pytest.raises(ValueError):
        constrained_frontier_point(fig1, 10.0)


def test_constrained_interior_matches_closed_form(fig1):
    for t in np.linspace(fig1.mu.min(), fig1.mu.max(), 60):
        q = ef_fractions(fig1, t)
        if np.all(q >= 0):
            p = constrained_frontier_point(fig1, t)
            assert p.sigma_P == pytest.approx(float(efficient_frontier(fig1, t)), abs=1e-8)


@settings(max_examples=150, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**32 - 1), st.floats(0, 1))
def test_constrained_matches_enumeration(n, seed, s):
    u = random_universe(np.random.default_rng(seed), n)
    t = u.mu.min() + s * (u.mu.max() - u.mu.min())
    a, b = constrained_frontier_point(u, t), constrained_enumerate(u, t)
    assert a.sigma_P == pytest.approx(b.sigma_P, rel=1e-9, abs=1e-12)
    assert a.fractions.sum() == pytest.approx(1, abs=1e-12)
    assert a.fractions @ u.mu == pytest.approx(t, abs=1e-12)


def test_frontier_dominance(fig1):
    rng = np.random.default_rng(0)
    for q in rng.dirichlet(np.ones(3), 300):
        mu = q @ fig1.mu
        sigma = math.sqrt(np.sum(q**2 * fig1.sigma2))
        assert sigma >= constrained_frontier_point(fig1, mu).sigma_P - 1e-12


def test_constrained_frontier_grid(fig1):
    pts = constrained_frontier(fig1, np.linspace(0.13, 0.2, 5))
    assert len(pts) == 5 and all(p.fractions.min() >= 0 for p in pts)


def test_approx_frontier_vertex(fig1):
    C0, C1, _ = moment_sums(fig1).C_tilde
    mu = np.linspace(0, 0.5, 501)
    s = approx_frontier(fig1, mu)
    assert mu[np.argmin(s)] == pytest.approx(C1 / C0, abs=1e-3)


@pytest.mark.parametrize("eps", [1e-2, 1e-3])
def test_approx_frontier_converges_to_ef(fig1, eps):
    u = fig1.scaled(eps)
    C1 = moment_sums(u).C[1] / moment_sums(u).C[0]
    for mu in C1 * np.array([0.5, 1.0, 1.5]):
        ratio = float(approx_frontier(u, mu)) / float(efficient_frontier(u, mu))
        assert abs(ratio - 1) < 20 * eps


def test_kelly_point_fig1(fig1):
    kp = kelly_point(fig1)
    assert kp.mu_K == pytest.approx(0.279118, abs=1e-6)
    assert kp.sigma_K == pytest.approx(0.340415, abs=1e-6)
    assert kp.active_set == (1, 2)
    assert on_frontier_residual(fig1) <= 1e-12


def test_kelly_point_single_active_asset():
    u = AssetUniverse.from_params([0.3, 0.05], [0.1, 0.2])
    kp = kelly_point(u)
    assert kp.mu_K == pytest.approx(0.35, abs=1e-15)
    assert kp.sigma_K == pytest.approx(math.sqrt(0.1), abs=1e-15)
    assert on_frontier_residual(u) <= 1e-15


def test_kelly_point_needs_active_asset():
    with pytest.raises(ValueError):
        kelly_point(AssetUniverse.from_params([-0.1], [0.04]))


@pytest.mark.parametrize("eps", [1.0, 1e-3])
def test_on_frontier_residual_scale_free(eps):
    rng = np.random.default_rng(5)
    for _ in range(20):
        u = random_universe(rng, 6)
        if np.any(u.m > -u.D / 2):
            assert on_frontier_residual(u.scaled(eps)) <= 1e-10
