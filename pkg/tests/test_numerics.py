import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from activetrial.numerics import (
    NelderMeadOptions,
    NonFiniteObjective,
    NotPositiveDefinite,
    cho_solve,
    cholesky,
    child_seeds,
    finite_diff_gradient,
    make_rng,
    nelder_mead,
    sample_standard_normal,
    sample_uniform,
)


def test_cholesky_identity():
    assert np.array_equal(cholesky(np.eye(3)), np.eye(3))


def test_cholesky_hand_example():
    L = cholesky([[4.0, 2.0], [2.0, 3.0]])
    np.testing.assert_allclose(L, [[2.0, 0.0], [1.0, math.sqrt(2.0)]], atol=1e-14)


def test_cholesky_indefinite():
    with pytest.raises(NotPositiveDefinite):
        cholesky([[1.0, 2.0], [2.0, 1.0]])


def test_cholesky_rejects_asymmetric():
    with pytest.raises(ValueError):
        cholesky([[2.0, 1.0], [0.0, 2.0]])


def test_cholesky_jitter_rescues_semidefinite():
    v = np.array([1.0, 2.0, 3.0])
    m = np.outer(v, v)  # rank one
    L = cholesky(m)
    assert np.linalg.norm(L @ L.T - m) / np.linalg.norm(m) < 1e-3
    with pytest.raises(NotPositiveDefinite):
        cholesky(m, jitter=False)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 12), seed=st.integers(0, 2**31 - 1))
def test_cholesky_roundtrip_and_solve(n, seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, n))
    m = A @ A.T + n * np.eye(n)
    L = cholesky(m)
    assert np.linalg.norm(L @ L.T - m) / np.linalg.norm(m) < 1e-8
    b = rng.standard_normal(n)
    z = cho_solve(L, b)
    assert np.max(np.abs(m @ z - b)) < 1e-7 * np.max(np.abs(b))


def test_nelder_mead_quadratic():
    x, f = nelder_mead(lambda x: float(x @ x), [1.0, 1.0], NelderMeadOptions(xtol=1e-8))
    assert np.all(np.abs(x) < 1e-4)


def test_nelder_mead_1d():
    x, _ = nelder_mead(lambda x: float((x[0] - 3.0) ** 2), [0.0], NelderMeadOptions(xtol=1e-8))
    assert abs(x[0] - 3.0) < 1e-4


def test_nelder_mead_rosenbrock():
    def rosen(x):
        return float(100 * (x[1] - x[0] ** 2) ** 2 + (1 - x[0]) ** 2)

    x, f = nelder_mead(rosen, [-1.2, 1.0], NelderMeadOptions(xtol=1e-10, max_evals=5000))
    np.testing.assert_allclose(x, [1.0, 1.0], atol=1e-3)


def test_nelder_mead_nonfinite_start():
    with pytest.raises(NonFiniteObjective):
        nelder_mead(lambda x: math.nan, [0.0])


def test_nelder_mead_treats_nonfinite_as_inf():
    # a wall of NaN for x < 0 should not derail the search
    def f(x):
        return math.nan if x[0] < 0 else float((x[0] - 1.0) ** 2)

    x, _ = nelder_mead(f, [0.5], NelderMeadOptions(xtol=1e-8))
    assert abs(x[0] - 1.0) < 1e-4


def test_nelder_mead_respects_budget():
    calls = []

    def f(x):
        calls.append(1)
        return float(x @ x)

    nelder_mead(f, [5.0, 5.0], NelderMeadOptions(xtol=0.0, max_evals=50))
    assert len(calls) <= 50 + 3


def test_finite_diff_examples():
    assert finite_diff_gradient(lambda x: float(x[0] ** 2), [2.0])[0] == pytest.approx(4.0, abs=1e-6)
    assert np.array_equal(finite_diff_gradient(lambda x: 7.0, [1.0, 2.0]), [0.0, 0.0])
    assert finite_diff_gradient(lambda x: math.sin(x[0]), [0.0])[0] == pytest.approx(1.0, abs=1e-8)
    with pytest.raises(ValueError):
        finite_diff_gradient(lambda x: 0.0, [0.0], h=0.0)


def test_normal_moments():
    z = sample_standard_normal(make_rng(1), 10**6)
    assert abs(z.mean()) < 0.005
    assert abs(z.var() - 1.0) < 0.01


def test_uniform_mean_and_domain():
    u = sample_uniform(make_rng(2), -1.0, 1.0, 10**6)
    assert abs(u.mean()) < 0.002
    assert u.min() >= -1.0 and u.max() < 1.0
    with pytest.raises(ValueError):
        sample_uniform(make_rng(2), 1.0, 1.0)


def test_rng_determinism_and_children():
    a = sample_standard_normal(make_rng(42), 100)
    b = sample_standard_normal(make_rng(42), 100)
    assert np.array_equal(a, b)
    kids = [make_rng(s).random(5) for s in child_seeds(42, 3)]
    assert not np.array_equal(kids[0], kids[1])
    again = [make_rng(s).random(5) for s in child_seeds(42, 3)]
    assert all(np.array_equal(x, y) for x, y in zip(kids, again))
    g = make_rng(3)
    assert make_rng(g) is g
