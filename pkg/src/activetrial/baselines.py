"""Passive comparators: OLS interaction model and AIPWE contrasts/values."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .kernel import KernelConfig
from ._kernels import bandwidth_nw
from .scenarios import Dataset

RIDGE = 1e-8


class RankDeficient(np.linalg.LinAlgError):
    pass


def _design(X, A) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    A = np.asarray(A, dtype=np.float64).reshape(-1, 1)
    return np.hstack([np.ones((X.shape[0], 1)), X, A, X * A])


def _lstsq(Z, y) -> np.ndarray:
    cols = Z.shape[1]
    if Z.shape[0] >= cols and np.linalg.matrix_rank(Z) == cols:
        beta, *_ = np.linalg.lstsq(Z, y, rcond=None)
        return beta
    G = Z.T @ Z + RIDGE * np.eye(cols)
    try:
        beta = np.linalg.solve(G, Z.T @ y)
    except np.linalg.LinAlgError:
        raise RankDeficient("design is singular even with ridge") from None
    if not np.all(np.isfinite(beta)):
        raise RankDeficient("ridge solution is not finite")
    return beta


@dataclass(frozen=True)
class LinearItr:
    """``R ~ b0 + X bX + A bA + (X A) bXA``; the rule is ``sign(bA + x . bXA)``."""

    intercept: float
    beta_x: np.ndarray
    beta_a: float
    beta_xa: np.ndarray

    @property
    def coef(self) -> np.ndarray:
        return np.concatenate([[self.intercept], self.beta_x, [self.beta_a], self.beta_xa])

    def q(self, X, a) -> np.ndarray:
        """Predicted mean outcome under arm ``a``."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        a = np.broadcast_to(np.asarray(a, dtype=np.float64), (X.shape[0],))
        return _design(X, a) @ self.coef

    def contrast(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return 2.0 * (self.beta_a + X @ self.beta_xa)

    def rule(self, X) -> np.ndarray:
        return np.where(self.contrast(X) >= 0.0, 1, -1)

    __call__ = rule


def fit_ols_itr(data: Dataset) -> LinearItr:
    Z = _design(data.X, data.A)
    beta = _lstsq(Z, data.R)
    p = data.p
    return LinearItr(float(beta[0]), beta[1:p + 1], float(beta[p + 1]), beta[p + 2:])


def passive_ols(spec, N: int, rng) -> LinearItr:
    """Plain randomised trial of ``N`` arrivals followed by the OLS fit."""
    return fit_ols_itr(spec.sample_dataset(N, rng))


# --------------------------------------------------------------------- AIPWE


def _kernel_q(data: Dataset, cfg: KernelConfig):
    arms = {a: data.arm(a) for a in (1, -1)}

    def q(X, a):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        a = np.broadcast_to(np.asarray(a), (X.shape[0],))
        out = np.empty(X.shape[0])
        for arm in (1, -1):
            m = a == arm
            if m.any():
                Xa, Ra = arms[arm]
                out[m] = bandwidth_nw(Xa, Ra, X[m], cfg.C1, cfg.L)[1]
        return out

    return q


def outcome_model(data: Dataset, q_model, cfg: KernelConfig = KernelConfig()) -> Callable:
    """Working model ``Q(X, a)``: ``"linear"``, ``"kernel"`` or a callable."""
    if callable(q_model):
        return q_model
    if q_model in ("linear", "linear-regression"):
        return fit_ols_itr(data).q
    if q_model in ("kernel", "kernel-regression"):
        return _kernel_q(data, cfg)
    raise ValueError(f"unknown q_model {q_model!r}")


def aipwe_targets(data: Dataset, q) -> np.ndarray:
    """``W[:, 0] = W_{+1}``, ``W[:, 1] = W_{-1}`` per subject."""
    W = np.empty((data.n, 2))
    for col, a in enumerate((1, -1)):
        qa = np.asarray(q(data.X, np.full(data.n, a)), dtype=np.float64)
        ind = (data.A == a).astype(np.float64)
        W[:, col] = ind * (data.R - qa) / data.propensity_of(np.full(data.n, a)) + qa
    return W


def aipwe_contrast(data: Dataset, q_model, x_grid, cfg: KernelConfig = KernelConfig()):
    """Doubly robust targets and the smoothed contrast ``E[W+|x] - E[W-|x]``.

    The same regression family as ``q_model`` smooths ``W`` on ``X``; a
    callable ``q_model`` is paired with linear smoothing.
    """
    q = outcome_model(data, q_model, cfg)
    W = aipwe_targets(data, q)
    G = np.atleast_2d(np.asarray(x_grid, dtype=np.float64))
    if q_model in ("kernel", "kernel-regression"):
        est = [bandwidth_nw(data.X, W[:, c], G, cfg.C1, cfg.L)[1] for c in (0, 1)]
    else:
        Z = np.hstack([np.ones((data.n, 1)), data.X])
        Zg = np.hstack([np.ones((G.shape[0], 1)), G])
        est = [Zg @ _lstsq(Z, W[:, c]) for c in (0, 1)]
    return W, est[0] - est[1]


def aipwe_value(data: Dataset, rule, q_model, cfg: KernelConfig = KernelConfig()) -> float:
    """Empirical AIPWE value of ``rule``.

    Mean of ``R 1{A=D}/pi(A) - (1{A=D} - pi(D)) / pi(D) * Q(X, D)``.
    """
    q = outcome_model(data, q_model, cfg)
    D = np.asarray(rule(data.X)).reshape(-1)
    ind = (data.A == D).astype(np.float64)
    pi_a = data.propensity_of(data.A)
    pi_d = data.propensity_of(D)
    qd = np.asarray(q(data.X, D), dtype=np.float64)
    return float(np.mean(data.R * ind / pi_a - (ind - pi_d) / pi_d * qd))


# -------------------------------------------------------------- external rules


class ExternalRule:
    """Rule imported from a predictions CSV (``x_1..x_p, arm``).

    Lookup is by exact covariate match; use it on the rows it was exported for.
    """

    def __init__(self, X, arms):
        self.X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        self.arms = np.asarray(arms, dtype=np.int64)
        self._index = {tuple(r): int(a) for r, a in zip(self.X, self.arms)}

    @classmethod
    def from_csv(cls, path) -> "ExternalRule":
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
        header, body = rows[0], rows[1:]
        if "arm" not in header:
            raise ValueError("predictions CSV needs an 'arm' column")
        ia = header.index("arm")
        ix = [i for i, h in enumerate(header) if h != "arm"]
        X = [[float(r[i]) for i in ix] for r in body]
        A = [int(float(r[ia])) for r in body]
        if any(a not in (-1, 1) for a in A):
            raise ValueError("arm values must be -1 or 1")
        return cls(X, A)

    def __call__(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        try:
            return np.array([self._index[tuple(r)] for r in X])
        except KeyError as exc:
            raise KeyError(f"no imported prediction for covariates {exc.args[0]}") from None
