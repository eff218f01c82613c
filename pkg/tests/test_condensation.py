import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from kelly_lab import condensation as cond
from kelly_lab.condensation import PhaseRegion as P
from kelly_lab.kelly import kelly_constrained
from kelly_lab.model import AssetUniverse


def region_from_fractions(q, m, D):
    """Phase label implied by a two-asset Kelly portfolio."""
    q1, q2 = q
    if q1 == 0 and q2 == 0:
        return P.A
    if q2 == 0:
        if q1 >= 1 - 1e-12:
            return P.D1 if m[1] <= -D[1] / 2 else P.F1
        return P.B1
    if q1 == 0:
        if q2 >= 1 - 1e-12:
            return P.D2 if m[0] <= -D[0] / 2 else P.F2
        return P.B2
    return P.E if q1 + q2 >= 1 - 1e-12 else P.C


@pytest.mark.parametrize("m1, m2, region", [
    (-0.1, -0.2, P.A), (0.3, 0.05, P.F1), (0.05, 0.02, P.E), (0.0, -0.2, P.B1),
    (0.1, -0.15, P.D1), (-0.1, 0.05, P.B2), (-0.2, 0.2, P.D2), (-0.01, 0.0, P.C), (0.0, 0.2, P.F2), (0.0, 0.0, P.E),
])
def test_phase_examples(m1, m2, region):
    assert cond.two_asset_phase(m1, m2, 0.1, 0.2) is region


def test_phase_grid_matches_kelly_sign_pattern():
    ms = np.linspace(-0.3, 0.4, 50)
    seen = set()
    for m1, m2, region in cond.phase_grid(ms, 0.1, 0.2):
        q = kelly_constrained(AssetUniverse.from_params([m1, m2], [0.1, 0.2])).fractions
        assert region is region_from_fractions(q, (m1, m2), (0.1, 0.2)), (m1, m2)
        seen.add(region)
    assert seen == set(P)


def test_thresholds():
    assert cond.condensation_thresholds(0.0, 0.1, 0.2) == pytest.approx((-0.15, 0.15))
    lo, hi = cond.condensation_thresholds(0.05, 0.07, 0.07)
    assert hi - lo == pytest.approx(0.14)
    # swapping the assets mirrors the thresholds around m2
    a = cond.condensation_thresholds(0.1, 0.1, 0.2)
    b = cond.condensation_thresholds(0.1, 0.2, 0.1)
    assert a == pytest.approx(b)


def test_ipr():
    assert cond.ipr(np.full(7, 1 / 7)) == pytest.approx(7)
    assert cond.ipr([0, 1, 0]) == 1
    assert cond.ipr([0.99, 0.01]) == pytest.approx(1 / (0.99**2 + 0.01**2))
    # partially invested: effective count relative to the invested total
    assert cond.ipr([0.2, 0.2]) == pytest.approx(2)
    with pytest.raises(ValueError):
        cond.ipr([0, 0])


def test_equal_vol_example():
    r = cond.equal_vol_portfolio([0.03, 0.01, -0.01], 0.01)
    assert r.report.M == 1 and r.active_set == (0,)
    np.testing.assert_allclose(r.fractions, [1, 0, 0], atol=1e-15)


def test_equal_vol_symmetric_and_order():
    r = cond.equal_vol_portfolio([0.02] * 5, 0.01)
    np.testing.assert_allclose(r.fractions, 0.2)
    r = cond.equal_vol_portfolio([-0.01, 0.03, 0.02], 0.05)
    assert r.fractions[0] == 0 and r.fractions[1] > r.fractions[2] > 0
    assert isinstance(r.report.gamma_M, float)


def test_equal_vol_all_cash():
    r = cond.equal_vol_portfolio([-0.3, -0.2], 0.1)
    assert r.report.M == 0 and r.report.ipr == 0


@settings(max_examples=300, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_equal_vol_matches_constrained_kelly(n, seed):
    rng = np.random.default_rng(seed)
    D = rng.uniform(0.01, 0.3)
    ms = rng.uniform(-D, D, n)
    r = cond.equal_vol_portfolio(ms, D)
    q = kelly_constrained(AssetUniverse.from_params(ms, np.full(n, D))).fractions
    np.testing.assert_allclose(r.fractions, q, atol=1e-12)
    assert r.report.ipr <= r.report.M + 1e-12


def test_equal_vol_two_assets_matches_phase():
    D = 0.1
    for m1 in np.linspace(0.02, 0.3, 15):
        r = cond.equal_vol_portfolio([m1, 0.05], D)
        region = cond.two_asset_phase(m1, 0.05, D, D)
        assert (r.report.M == 1) == (region is P.F1)


def test_batch_matches_scalar():
    rng = np.random.default_rng(1)
    ms = -np.sort(-rng.uniform(-0.1, 0.05, (50, 40)), axis=1)
    M, q, R = cond.equal_vol_batch(ms, 0.01)
    for i in range(50):
        r = cond.equal_vol_portfolio(ms[i], 0.01)
        assert M[i] == r.report.M
        np.testing.assert_allclose(q[i], r.fractions, atol=1e-14)


def test_typical_size_branches():
    spec = cond.UniformSpec(1000, 0.01, -0.15, 0.15)
    assert cond.typical_size_uniform(spec) == pytest.approx(math.sqrt(2 * 1000 * 0.01 / 0.3))
    assert cond.typical_size_uniform(spec) == pytest.approx(8.16, abs=0.01)
    middle = cond.UniformSpec(1000, 0.01, -0.10, -0.004)
    assert cond.typical_size_uniform(middle) == pytest.approx(1000 * 0.001 / 0.096)
    assert cond.typical_size_uniform(cond.UniformSpec(1000, 0.01, -0.3, -0.01)) == 0


def test_typical_ipr():
    spec = cond.UniformSpec(1000, 0.01, -0.15, 0.15)
    M_T = cond.typical_size_uniform(spec)
    full, simple = cond.typical_ipr(M_T, spec)
    assert simple == pytest.approx(6.12, abs=0.01)
    # the sum formula over ranks 1..M_T gives a smaller value
    assert full == pytest.approx(5.151, abs=1e-3)


def test_uniform_monte_carlo_deterministic():
    spec = cond.UniformSpec.centered(200, 0.01, -0.05, 0.1)
    a = cond.mc_uniform(spec, 500, seed=3)
    assert a == cond.mc_uniform(spec, 500, seed=3)
    assert a.mean_ipr <= a.mean_M


def test_median_constants_match_beta_quantiles():
    n = 100
    c1, c2 = cond.top_two_median_constants(n)
    assert c1 == pytest.approx(n * stats.beta.median(1, n), rel=1e-10)
    assert c2 == pytest.approx(n * stats.beta.median(2, n - 1), rel=1e-8)
    big = cond.top_two_median_constants(10**6)
    assert big[0] == pytest.approx(math.log(2), rel=1e-5)
    assert big[1] == pytest.approx(1.678, abs=1e-3)


def test_powerlaw_examples():
    spec = cond.PowerLawSpec(1000, 0.1, 0.1)
    assert cond.median_gap(1.0, 100, 0.1) == pytest.approx(14.427 - 5.952, abs=1e-2)
    assert cond.powerlaw_alpha1(spec, 8.47) == pytest.approx(1.0, abs=1e-3)
    gap2 = cond.median_gap(2.0, 100, 0.1)
    assert gap2 == pytest.approx(0.430, abs=1e-3)
    assert cond.powerlaw_alpha1(spec, gap2) == pytest.approx(2.0, abs=1e-9)


def test_powerlaw_alpha1_decreasing():
    spec = cond.PowerLawSpec(1000, 0.1, 0.1)
    a = [cond.powerlaw_alpha1(spec, D) for D in np.linspace(0.1, 10, 60)]
    assert all(x is not None for x in a)
    assert np.all(np.diff(a) < 0)


def test_powerlaw_no_root():
    assert cond.powerlaw_alpha1(cond.PowerLawSpec(1000, 0.1, 0.1), 1e-5) is None


def test_condensation_probability_limits():
    spec = cond.PowerLawSpec(1000, 0.1, 0.1, alpha=1.5)
    assert cond.mc_condensation_prob(spec, 0.0, 2000, seed=1)[0] == 1.0
    assert cond.mc_condensation_prob(spec, 1e9, 2000, seed=1)[0] == 0.0


def test_condensation_probability_at_median_root():
    base = cond.PowerLawSpec(1000, 0.1, 0.1)
    a1 = cond.powerlaw_alpha1(base, 1.0)
    p, se = cond.mc_condensation_prob(cond.PowerLawSpec(1000, 0.1, 0.1, alpha=a1), 1.0, 100_000, seed=2)
    assert abs(p - 0.5) <= 0.15
    assert se < 0.002


@pytest.mark.parametrize("kwargs", [dict(r=0.0), dict(r=1.5), dict(m_min=0.0)])
def test_powerlaw_spec_validation(kwargs):
    base = dict(N=1000, r=0.1, m_min=0.1)
    with pytest.raises(ValueError):
        cond.PowerLawSpec(**{**base, **kwargs})
