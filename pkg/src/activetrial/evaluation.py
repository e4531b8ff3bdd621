"""Rule values, excess value, margin exponent, convergence-rate fits and CV."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .numerics import make_rng
from .scenarios import MINIMIZE, Dataset, ScenarioSpec

DEFAULT_TEST_SIZE = 10_000


class NoConcordantSubjects(ValueError):
    pass


class DegenerateFraction(ValueError):
    pass


class NonPositiveAev(ValueError):
    pass


def _arms(rule, X) -> np.ndarray:
    return np.asarray(rule(X)).reshape(-1)


def mc_value(rule, spec: ScenarioSpec, n: int, rng) -> float:
    """Monte Carlo value from noiseless means on ``n`` fresh covariate draws."""
    if n < 1:
        raise ValueError("n must be at least 1")
    X = spec.sample_covariates(n, make_rng(rng))
    return math.fsum(spec.mean_outcome(X, _arms(rule, X))) / n


def aev(rule, spec: ScenarioSpec, test_x) -> float:
    """Average excess value ``mean[T0(x, D*) - T0(x, D)]`` over ``test_x``."""
    X = np.atleast_2d(np.asarray(test_x, dtype=np.float64))
    if X.shape[0] == 0:
        raise ValueError("test_x is empty")
    gap = spec.t0(X, spec.optimal_rule(X)) - spec.t0(X, _arms(rule, X))
    return math.fsum(gap) / X.shape[0]


def ipw_value(data: Dataset, rule) -> float:
    D = _arms(rule, data.X)
    w = (data.A == D) / data.propensity_of(data.A)
    return math.fsum(data.R * w) / data.n


def ipw_value_se(data: Dataset, rule) -> float:
    D = _arms(rule, data.X)
    terms = data.R * (data.A == D) / data.propensity_of(data.A)
    return float(terms.std(ddof=1) / math.sqrt(data.n))


def weighted_mean_outcome(data: Dataset, rule) -> float:
    """Ratio estimator ``P_n[R 1{A=D}/pi(A)] / P_n[1{A=D}/pi(A)]``."""
    D = _arms(rule, data.X)
    w = (data.A == D) / data.propensity_of(data.A)
    den = math.fsum(w)
    if den <= 0:
        raise NoConcordantSubjects("no subject received the arm the rule recommends")
    return math.fsum(w * data.R) / den


def margin_exponent(spec, t_grid: Sequence[float], n: int, rng) -> float:
    """Slope of ``log P(|f*| <= t)`` against ``log t`` over ``t_grid``."""
    t = np.asarray(t_grid, dtype=np.float64)
    if t.size < 5 or np.any(t <= 0):
        raise ValueError("t_grid needs at least 5 positive points")
    X = spec.sample_covariates(n, make_rng(rng))
    absf = np.sort(np.abs(spec.true_contrast(X)))
    frac = np.searchsorted(absf, t, side="right") / absf.size
    if np.any(frac == 0):
        raise DegenerateFraction(f"empty margin set at t = {t[frac == 0].tolist()}")
    slope, _ = np.polyfit(np.log(t), np.log(frac), 1)
    return float(slope)


def margin_fractions(spec, t_grid, n: int, rng) -> np.ndarray:
    """Empirical ``P(|f*| <= t)`` for each ``t``; the brute-force oracle."""
    X = spec.sample_covariates(n, make_rng(rng))
    absf = np.abs(spec.true_contrast(X))
    return np.array([np.mean(absf <= t) for t in t_grid])


# ------------------------------------------------------------------- rates


def rate_exponent(d: float, gamma: float) -> float:
    """Exponent of ``N`` in the excess-value bound: ``-(1+gamma)/(2+d-gamma)``."""
    return -(1.0 + gamma) / (2.0 + d - gamma)


def log_power(d: float, gamma: float) -> float:
    """Power of ``log(N/alpha)`` in the bound."""
    return (4.0 + 2.0 * d - gamma) * (1.0 + gamma) / ((2.0 + d) * (2.0 + d - gamma))


@dataclass
class RateFit:
    points: list[tuple[float, float]]
    slope: float
    intercept: float
    slope_se: float
    theoretical_slope: float
    theta: float
    excluded: list[tuple[float, float]] = field(default_factory=list)

    def slope_ci(self, z: float = 1.96) -> tuple[float, float]:
        return self.slope - z * self.slope_se, self.slope + z * self.slope_se

    def within_bound(self, slack: float = 0.35) -> bool:
        return self.slope <= self.theoretical_slope + slack


def rate_fit(results: Sequence[tuple[float, float]], d: float = 2, gamma: float = 1) -> RateFit:
    """OLS of ``log AEV`` on ``log N``; non-positive AEV points are set aside."""
    good = [(float(n), float(a)) for n, a in results if a > 0]
    bad = [(float(n), float(a)) for n, a in results if not a > 0]
    if len(good) < 4:
        raise NonPositiveAev(f"need 4 budgets with AEV > 0; excluded {bad}")
    x = np.log([g[0] for g in good])
    y = np.log([g[1] for g in good])
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    dof = max(len(x) - 2, 1)
    s2 = float(resid @ resid) / dof
    se = math.sqrt(s2 / float(((x - x.mean()) ** 2).sum()))
    return RateFit(
        points=list(zip(x.tolist(), y.tolist())),
        slope=float(coef[0]),
        intercept=float(coef[1]),
        slope_se=se,
        theoretical_slope=rate_exponent(d, gamma),
        theta=log_power(d, gamma),
        excluded=bad,
    )


# -------------------------------------------------------------------- CV

Learner = Callable[[Dataset, int, np.random.Generator], Callable]


def fold_indices(n: int, folds: int, rng) -> list[np.ndarray]:
    perm = make_rng(rng).permutation(n)
    return [np.sort(part) for part in np.array_split(perm, folds)]


def cross_validate(pool: Dataset, folds: int, methods: Mapping[str, Learner], budgets: Sequence[int],
                   reps: int, rng) -> list[dict]:
    """K-fold CV of learned rules, scored by held-out weighted mean outcome.

    Each learner is called as ``learner(train, budget, rng)`` and returns a
    rule. Rows carry ``method, budget, replication, cv_value``; average over
    replications with :func:`summarize`.
    """
    if folds < 2:
        raise ValueError("folds must be at least 2")
    if pool.n < folds:
        raise ValueError("pool smaller than the number of folds")
    rng = make_rng(rng)
    rows = []
    for rep in range(reps):
        parts = fold_indices(pool.n, folds, rng)
        for name, learner in methods.items():
            for budget in budgets:
                vals = []
                for f in range(folds):
                    train_idx = np.concatenate([parts[g] for g in range(folds) if g != f])
                    rule = learner(pool.subset(train_idx), budget, rng)
                    vals.append(weighted_mean_outcome(pool.subset(parts[f]), rule))
                rows.append({"method": name, "budget": budget, "replication": rep,
                             "cv_value": math.fsum(vals) / folds})
    return rows


def summarize(rows: Sequence[dict], key: str = "cv_value") -> dict:
    """Mean of ``key`` per ``(method, budget)``."""
    acc: dict = {}
    for r in rows:
        acc.setdefault((r["method"], r["budget"]), []).append(r[key])
    return {k: math.fsum(v) / len(v) for k, v in sorted(acc.items())}


def best_index(values: Sequence[float], direction: str) -> int:
    values = np.asarray(values)
    return int(np.argmin(values) if direction == MINIMIZE else np.argmax(values))
