import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from activetrial.baselines import fit_ols_itr
from activetrial.evaluation import (
    DegenerateFraction,
    NoConcordantSubjects,
    NonPositiveAev,
    aev,
    cross_validate,
    fold_indices,
    ipw_value,
    ipw_value_se,
    margin_exponent,
    margin_fractions,
    mc_value,
    rate_fit,
    summarize,
    weighted_mean_outcome,
)
from activetrial.numerics import make_rng
from activetrial.scenarios import Dataset, ScenarioSpec, get_scenario
from activetrial.trial import AL_GP, TrialConfig, replay_pool

S1 = get_scenario(1)
# E|1 - X1 - X2| for X uniform on [-1, 1]^2, by quadrature: 13/12
MEAN_ABS_CONTRAST_S1 = 1.0833333333333333
T_GRID = np.geomspace(0.01, 0.5, 20)


def plus(X):
    return np.ones(np.atleast_2d(X).shape[0], dtype=int)


def minus(X):
    return -plus(X)


def anti(X):
    return -S1.optimal_rule(X)


def test_mc_value_examples():
    gap = mc_value(S1.optimal_rule, S1, 10**4, make_rng(0)) - mc_value(anti, S1, 10**4, make_rng(0))
    assert gap > 0
    diff = mc_value(plus, S1, 10**4, make_rng(1)) - mc_value(minus, S1, 10**4, make_rng(1))
    assert abs(diff - 1.0) < 0.02
    assert mc_value(plus, S1, 100, make_rng(2)) == mc_value(plus, S1, 100, make_rng(2))
    with pytest.raises(ValueError):
        mc_value(plus, S1, 0, make_rng(0))


def test_aev_examples():
    X = S1.sample_covariates(10**4, make_rng(3))
    assert aev(S1.optimal_rule, S1, X) == 0.0
    assert abs(aev(anti, S1, X) - MEAN_ABS_CONTRAST_S1) < 0.03
    boundary = np.array([[t, 1 - t] for t in np.linspace(0, 1, 11)])
    flipped = np.vstack([X[:100], boundary])

    def flip_on_boundary(Q):
        out = S1.optimal_rule(Q)
        on = np.isclose(S1.true_contrast(Q), 0.0, atol=1e-15)
        out[on] = -out[on]
        return out

    assert aev(flip_on_boundary, S1, flipped) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ValueError):
        aev(plus, S1, np.empty((0, 2)))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), sid=st.sampled_from([1, 2, 3, 5, 6]))
def test_aev_nonnegative(seed, sid):
    s = get_scenario(sid)
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(s.p + 1)
    rule = lambda X: np.where(w[0] + np.atleast_2d(X) @ w[1:] >= 0, 1, -1)  # noqa: E731
    assert aev(rule, s, s.sample_covariates(500, rng)) >= -1e-12


def test_ipw_examples():
    d = S1.sample_dataset(200, make_rng(4))
    realized = lambda X: d.A  # noqa: E731
    assert ipw_value(d, realized) == pytest.approx(2 * np.mean(d.R))
    assert ipw_value(d, lambda X: -d.A) == 0.0


def test_ipw_matches_mc():
    d = S1.sample_dataset(10**4, make_rng(5))
    v = ipw_value(d, S1.optimal_rule)
    se = ipw_value_se(d, S1.optimal_rule)
    assert abs(v - mc_value(S1.optimal_rule, S1, 10**5, make_rng(6))) <= 3 * se


def test_ipw_mc_agreement_random_rules():
    d = S1.sample_dataset(10**4, make_rng(7))
    rng = make_rng(8)
    misses = 0
    for _ in range(20):
        w = rng.standard_normal(3)
        rule = lambda X, w=w: np.where(w[0] + np.atleast_2d(X) @ w[1:] >= 0, 1, -1)  # noqa: E731
        gap = abs(ipw_value(d, rule) - mc_value(rule, S1, 10**5, make_rng(9)))
        misses += gap > 3 * ipw_value_se(d, rule)
    # 3-sigma agreement; at most one chance exceedance in 20
    assert misses <= 1


def test_weighted_mean_examples():
    d = S1.sample_dataset(50, make_rng(10))
    assert weighted_mean_outcome(d, lambda X: d.A) == pytest.approx(np.mean(d.R))
    one = Dataset([[0.0], [1.0], [2.0]], [1, -1, -1], [7.0, 1.0, 2.0])
    assert weighted_mean_outcome(one, lambda X: np.array([1, 1, 1])) == 7.0
    # concordant subjects average 9, discordant average 12
    pool = Dataset([[0.0]] * 4, [1, 1, -1, -1], [8.0, 10.0, 11.0, 13.0], outcome_direction="minimize")
    assert weighted_mean_outcome(pool, lambda X: np.ones(4, dtype=int)) == 9.0
    with pytest.raises(NoConcordantSubjects):
        weighted_mean_outcome(one, lambda X: np.array([-1, 1, 1]))


def test_margin_exponent_scenario1_against_brute_force():
    frac = margin_fractions(S1, T_GRID, 10**6, make_rng(11))
    # the band |1 - x1 - x2| <= t has probability exactly t / 2 for t <= 1
    np.testing.assert_allclose(frac, T_GRID / 2, rtol=0.05)
    g = margin_exponent(S1, T_GRID, 10**6, make_rng(11))
    assert abs(g - 1.0) <= 0.15


def test_margin_exponent_scenario5():
    g = margin_exponent(get_scenario(5), T_GRID, 10**6, make_rng(12))
    assert abs(g - 1.0) <= 0.15


def _scaled(spec, c=1.0, shift=0.0):
    return ScenarioSpec(id=spec.id, p=spec.p, covariate_law=spec.covariate_law, sampler=spec.sampler,
                        m0_fn=spec.m0_fn, contrast_fn=lambda X: c * spec.contrast_fn(X) + shift)


def test_margin_degenerate():
    with pytest.raises(DegenerateFraction):
        margin_exponent(_scaled(S1, shift=10.0), T_GRID, 10**5, make_rng(13))
    with pytest.raises(ValueError):
        margin_exponent(S1, [0.1, 0.2], 10**5, make_rng(13))


@pytest.mark.parametrize("c", [0.5, 2.0])
def test_margin_scale_invariance(c):
    base = margin_exponent(S1, T_GRID, 10**6, make_rng(14))
    scaled = margin_exponent(_scaled(S1, c), T_GRID, 10**6, make_rng(14))
    assert abs(scaled - base) <= 0.1


def test_rate_fit_exact_power_law():
    fit = rate_fit([(n, 1.0 / n) for n in (100, 200, 400, 800)])
    assert abs(fit.slope + 1.0) < 1e-10
    assert len(fit.points) == 4


def test_rate_fit_theory_values():
    fit = rate_fit([(n, n ** -0.5) for n in (10, 20, 40, 80)], d=2, gamma=1)
    assert fit.theoretical_slope == pytest.approx(-2 / 3)
    assert fit.theta == pytest.approx(7 / 6)
    assert rate_fit([(n, 1 / n) for n in (10, 20, 40, 80)], d=3, gamma=1).theta == pytest.approx(0.9)
    assert fit.within_bound(0.35)


def test_rate_fit_nonpositive():
    pts = [(100, 0.1), (200, 0.0), (400, 0.02), (800, 0.01), (1600, 0.005)]
    fit = rate_fit(pts)
    assert fit.excluded == [(200.0, 0.0)]
    with pytest.raises(NonPositiveAev):
        rate_fit(pts[:4])


@settings(max_examples=30, deadline=None)
@given(k=st.floats(-3, 0.5), c=st.floats(0.01, 100))
def test_rate_fit_recovers_exponent(k, c):
    fit = rate_fit([(n, c * n ** k) for n in (50, 100, 200, 400, 800)])
    assert abs(fit.slope - k) < 1e-10


def test_folds_partition():
    for rep in range(3):
        parts = fold_indices(103, 5, make_rng(rep))
        allidx = np.concatenate(parts)
        assert np.array_equal(np.sort(allidx), np.arange(103))


def test_cross_validate_stub():
    pool = S1.sample_dataset(40, make_rng(15))
    stub = {"plus": lambda train, budget, rng: plus}
    rows = cross_validate(pool, 2, stub, [10], 3, make_rng(16))
    rng = make_rng(16)
    for r in rows:
        parts = fold_indices(pool.n, 2, rng)
        expect = np.mean([weighted_mean_outcome(pool.subset(p), plus) for p in parts])
        assert r["cv_value"] == pytest.approx(expect, rel=1e-14)
    assert len(rows) == 3
    assert set(summarize(rows)) == {("plus", 10)}
    with pytest.raises(ValueError):
        cross_validate(pool, 1, stub, [10], 1, make_rng(0))


def test_cross_validate_smoke_al_vs_ols():
    pool = S1.sample_dataset(500, make_rng(17))

    def al(train, budget, rng):
        return replay_pool(TrialConfig(N=budget, N0=50, estimator=AL_GP, seed=0), train, rng).rule

    def ols(train, budget, rng):
        idx = rng.choice(train.n, size=budget, replace=False)
        return fit_ols_itr(train.subset(idx)).rule

    rows = cross_validate(pool, 5, {"AL-GP": al, "OLS": ols}, [250], 1, make_rng(18))
    for r in rows:
        assert math.isfinite(r["cv_value"])
        assert pool.R.min() <= r["cv_value"] <= pool.R.max()
