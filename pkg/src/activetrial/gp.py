"""Gaussian-process contrast estimates (the AL-GP backend).

Each arm gets its own zero-mean GP with an ARD squared-exponential kernel
``gamma0 * exp(-sum_l (x_l - x'_l)^2 / (2 gamma_l^2))`` plus noise ``sigma2``.
Hyperparameters live in log space and are fitted by maximising the marginal
log-likelihood with multi-start Nelder-Mead.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._kernels import ard_gram, coordinate_sq_diffs
from .kernel import ContrastEstimate
from .numerics import (
    NelderMeadOptions,
    NonFiniteObjective,
    NotPositiveDefinite,
    cho_solve,
    cholesky,
    make_rng,
    nelder_mead,
    solve_lower,
)
from .scenarios import Dataset

LOG_BOUND = 15.0
MIN_FIT = 3
_LOG_2PI = math.log(2.0 * math.pi)


class AllRestartsFailed(RuntimeError):
    pass


@dataclass(frozen=True)
class GpHyperparams:
    gamma0: float
    lengthscales: tuple[float, ...]
    sigma2: float

    def __post_init__(self):
        ls = tuple(float(v) for v in np.atleast_1d(self.lengthscales))
        object.__setattr__(self, "lengthscales", ls)
        if not (self.gamma0 > 0 and self.sigma2 > 0 and all(v > 0 for v in ls)):
            raise ValueError("GP hyperparameters must be strictly positive")

    @property
    def p(self) -> int:
        return len(self.lengthscales)

    def to_log(self) -> np.ndarray:
        return np.log(np.array([self.gamma0, *self.lengthscales, self.sigma2]))

    @classmethod
    def from_log(cls, theta) -> "GpHyperparams":
        theta = np.asarray(theta, dtype=np.float64)
        e = np.exp(theta)
        return cls(float(e[0]), tuple(e[1:-1]), float(e[-1]))

    @classmethod
    def default(cls, p: int) -> "GpHyperparams":
        return cls(1.0, (1.0,) * p, 1.0)


@dataclass(frozen=True)
class GpConfig:
    restarts: int = 3
    multiplier: float = 3.0
    max_evals: int = 600
    xtol: float = 1e-3
    warm_start: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.restarts < 1:
            raise ValueError("restarts must be at least 1")
        if not self.multiplier > 0:
            raise ValueError("multiplier must be positive")


def _sq_dists(A, B, ls):
    As = A / ls
    Bs = B / ls
    d = (As * As).sum(1)[:, None] + (Bs * Bs).sum(1)[None, :] - 2.0 * As @ Bs.T
    return np.maximum(d, 0.0)


def gram(hp: GpHyperparams, A, B=None) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = A if B is None else np.atleast_2d(np.asarray(B, dtype=np.float64))
    ls = np.asarray(hp.lengthscales)
    return hp.gamma0 * np.exp(-0.5 * _sq_dists(A, B, ls))


def se_ard_kernel(hp: GpHyperparams, x, x2) -> float:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    x2 = np.asarray(x2, dtype=np.float64).reshape(-1)
    if x.shape != x2.shape or x.size != hp.p:
        raise ValueError("dimension mismatch")
    z = (x - x2) / np.asarray(hp.lengthscales)
    return float(hp.gamma0 * math.exp(-0.5 * float(z @ z)))


def _lml_core(theta, X, R, want_grad, D=None):
    p = X.shape[1]
    e = np.exp(theta)
    gamma0, ls, sigma2 = e[0], e[1:p + 1], e[p + 1]
    n = X.shape[0]
    if D is None:
        D = coordinate_sq_diffs(X)
    Kg, K = ard_gram(D, ls, gamma0, sigma2)
    Lf = cholesky(K, check=False)
    alpha = cho_solve(Lf, R)
    lml = -0.5 * float(R @ alpha) - float(np.log(np.diag(Lf)).sum()) - 0.5 * n * _LOG_2PI
    if not want_grad:
        return lml, None
    Kinv = cho_solve(Lf, np.eye(n))
    M = np.outer(alpha, alpha) - Kinv
    MK = M * Kg
    g = np.empty(p + 2)
    g[0] = 0.5 * float(MK.sum())
    for l in range(p):
        g[1 + l] = 0.5 * float((MK * D[l]).sum()) / ls[l] ** 2
    g[p + 1] = 0.5 * sigma2 * float(np.trace(M))
    return lml, g


def log_marginal_likelihood(hp: GpHyperparams, X, R, gradient: bool = False):
    """LML of ``R`` given ``X``; with ``gradient`` also d/d(log hyperparams)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    R = np.asarray(R, dtype=np.float64).reshape(-1)
    if X.shape[0] < 1:
        raise ValueError("need at least one training pair")
    lml, g = _lml_core(hp.to_log(), X, R, gradient)
    return (lml, g) if gradient else lml


def lml_log_space(theta, X, R, D=None) -> float:
    """LML as a function of log hyperparameters ``(log g0, log l_1.., log s2)``.

    ``D`` is an optional precomputed ``coordinate_sq_diffs(X)``.
    """
    return _lml_core(np.asarray(theta, dtype=np.float64), X, R, False, D)[0]


def initial_hyperparams(X, R) -> GpHyperparams:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    v = float(np.var(R))
    if not v > 0:
        v = 1.0
    sd = X.std(0)
    sd = np.where(sd > 0, sd, 1.0)
    return GpHyperparams(v, tuple(sd), 0.1 * v)


def fit_hyperparameters(X, R, opts: GpConfig = GpConfig(), init: GpHyperparams | None = None,
                        rng=None) -> GpHyperparams:
    """Best local maximiser of the LML over ``opts.restarts`` Nelder-Mead runs.

    The first run starts at the data-scaled default (``gamma0 = var R``,
    lengthscales = covariate std, ``sigma2 = 0.1 var R``), or at ``init`` when
    given; later runs perturb it by N(0, 1) in log space.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    R = np.asarray(R, dtype=np.float64).reshape(-1)
    if X.shape[0] < MIN_FIT:
        raise ValueError(f"need at least {MIN_FIT} points to fit, got {X.shape[0]}")
    rng = make_rng(opts.seed if rng is None else rng)
    start = (init or initial_hyperparams(X, R)).to_log()
    D = coordinate_sq_diffs(X)

    def neg(theta):
        if np.any(np.abs(theta) > LOG_BOUND):
            return np.inf
        try:
            return -lml_log_space(theta, X, R, D)
        except (NotPositiveDefinite, np.linalg.LinAlgError, FloatingPointError):
            return np.inf

    nm = NelderMeadOptions(xtol=opts.xtol, max_evals=opts.max_evals, initial_step=0.5)
    best = None
    for i in range(opts.restarts):
        x0 = start if i == 0 else start + rng.standard_normal(start.size)
        x0 = np.clip(x0, -LOG_BOUND + 1, LOG_BOUND - 1)
        try:
            x, fx = nelder_mead(neg, x0, nm)
        except NonFiniteObjective:
            continue
        if best is None or fx < best[1]:
            best = (x, fx)
    if best is None:
        raise AllRestartsFailed("every restart hit a non-finite objective at its start")
    return GpHyperparams.from_log(best[0])


@dataclass(frozen=True, eq=False)
class GpPosterior:
    """Fitted state for one arm. Empty ``X`` means the prior."""

    X: np.ndarray
    R: np.ndarray
    hp: GpHyperparams
    factor: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    @classmethod
    def fit(cls, X, R, hp: GpHyperparams) -> "GpPosterior":
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        R = np.asarray(R, dtype=np.float64).reshape(-1)
        if X.shape[0] == 0:
            return cls(X.reshape(0, hp.p), R, hp, np.empty((0, 0)), np.empty(0))
        K = gram(hp, X)
        K[np.diag_indices_from(K)] += hp.sigma2
        Lf = cholesky(K)
        return cls(X, R, hp, Lf, cho_solve(Lf, R))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def predict(self, Q, return_var: bool = True):
        Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
        if self.n == 0:
            mean = np.zeros(Q.shape[0])
            return (mean, np.full(Q.shape[0], self.hp.gamma0)) if return_var else mean
        Ks = gram(self.hp, Q, self.X)
        mean = Ks @ self.weights
        if not return_var:
            return mean
        V = solve_lower(self.factor, Ks.T)
        var = self.hp.gamma0 - (V * V).sum(0)
        return mean, np.maximum(var, 0.0)


def posterior(state: GpPosterior, x0) -> tuple[float, float]:
    m, v = state.predict(x0)
    return float(m[0]), float(v[0])


class GpContrastModel:
    """Independent per-arm GPs; radius ``multiplier * (sd_{+1} + sd_{-1})``.

    An arm with 1 or 2 observations cannot be fitted and forces an infinite
    radius; an arm with none falls back to the default-hyperparameter prior.
    """

    name = "AL-GP"

    def __init__(self, data: Dataset, cfg: GpConfig = GpConfig(), previous: "GpContrastModel | None" = None):
        self.cfg = cfg
        self.n = data.n
        self.arms: dict[int, GpPosterior | None] = {}
        for a in (1, -1):
            Xa, Ra = data.arm(a)
            if Xa.shape[0] == 0:
                self.arms[a] = GpPosterior.fit(Xa, Ra, GpHyperparams.default(data.p))
            elif Xa.shape[0] < MIN_FIT:
                self.arms[a] = None
            else:
                init = None
                if cfg.warm_start and previous is not None and previous.arms.get(a) is not None \
                        and previous.arms[a].n > 0:
                    init = previous.arms[a].hp
                hp = fit_hyperparameters(Xa, Ra, cfg, init=init, rng=make_rng(cfg.seed))
                self.arms[a] = GpPosterior.fit(Xa, Ra, hp)

    @property
    def hyperparams(self) -> dict[int, GpHyperparams | None]:
        return {a: (s.hp if s is not None else None) for a, s in self.arms.items()}

    def ci_batch(self, Q):
        Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
        q = Q.shape[0]
        if self.arms[1] is None or self.arms[-1] is None:
            return np.zeros(q), np.full(q, np.inf), {}
        mp, vp = self.arms[1].predict(Q)
        mm, vm = self.arms[-1].predict(Q)
        sp, sm = np.sqrt(vp), np.sqrt(vm)
        delta = self.cfg.multiplier * (sp + sm)
        return mp - mm, delta, {"sd_plus": sp, "sd_minus": sm}

    def contrast(self, Q) -> np.ndarray:
        Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
        if self.arms[1] is None or self.arms[-1] is None:
            return np.zeros(Q.shape[0])
        return self.arms[1].predict(Q, False) - self.arms[-1].predict(Q, False)

    def rule(self, Q) -> np.ndarray:
        return np.where(self.contrast(Q) >= 0.0, 1, -1)

    def ci(self, x0) -> ContrastEstimate:
        f, d, _ = self.ci_batch(x0)
        return ContrastEstimate(f_hat=float(f[0]), delta=float(d[0]))


def gp_contrast_ci(data: Dataset, x0, cfg: GpConfig = GpConfig()) -> ContrastEstimate:
    return GpContrastModel(data, cfg).ci(x0)
