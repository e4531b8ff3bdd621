"""Shared numerics: seeded streams, samplers, Cholesky with jitter, Nelder-Mead."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

JITTER_START = 1e-10
JITTER_MAX = 1e-4
SYMMETRY_RTOL = 1e-10


class NotPositiveDefinite(np.linalg.LinAlgError):
    pass


class NonFiniteObjective(ValueError):
    pass


# ----------------------------------------------------------------- streams


def make_rng(seed: int | np.random.SeedSequence | np.random.Generator | None = 0) -> np.random.Generator:
    """PCG64 generator. Passing a Generator returns it unchanged."""
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed or 0))))


def child_seeds(seed: int, n: int) -> list[np.random.SeedSequence]:
    """Independent child streams keyed by replication index."""
    return np.random.SeedSequence(int(seed)).spawn(n)


def spawn(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    return [np.random.Generator(np.random.PCG64(s)) for s in rng.bit_generator.seed_seq.spawn(n)]


def sample_standard_normal(rng: np.random.Generator, size=None):
    return rng.standard_normal(size)


def sample_uniform(rng: np.random.Generator, a: float, b: float, size=None):
    if not a < b:
        raise ValueError(f"uniform needs a < b, got a={a}, b={b}")
    return rng.uniform(a, b, size)


# -------------------------------------------------------------- linear algebra


def _check_symmetric(m: np.ndarray) -> None:
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    scale = max(np.abs(m).max(), 1e-300)
    if np.abs(m - m.T).max() > SYMMETRY_RTOL * scale:
        raise ValueError("matrix is not symmetric")


def _chol(m):
    return scipy.linalg.cholesky(m, lower=True, check_finite=False)


def cholesky(m, jitter: bool = True, check: bool = True) -> np.ndarray:
    """Lower Cholesky factor, escalating diagonal jitter on failure.

    Jitter is ``eps * mean(diag)`` with ``eps`` running 1e-10, 1e-9, ... 1e-4.
    ``check=False`` skips the symmetry test for matrices built symmetric.
    """
    m = np.asarray(m, dtype=np.float64)
    if check:
        _check_symmetric(m)
    if not np.all(np.isfinite(np.diag(m))):
        raise NotPositiveDefinite("non-finite diagonal")
    try:
        return _chol(m)
    except np.linalg.LinAlgError:
        if not jitter:
            raise NotPositiveDefinite("matrix is not positive definite") from None
    scale = float(np.mean(np.diag(m)))
    if not scale > 0:
        raise NotPositiveDefinite("non-positive mean diagonal")
    eps = JITTER_START
    idx = np.diag_indices_from(m)
    while eps <= JITTER_MAX * (1 + 1e-9):
        mj = m.copy()
        mj[idx] += eps * scale
        try:
            return _chol(mj)
        except np.linalg.LinAlgError:
            eps *= 10.0
    raise NotPositiveDefinite(f"not positive definite after jitter {JITTER_MAX:g}")


def cho_solve(factor: np.ndarray, b) -> np.ndarray:
    return scipy.linalg.cho_solve((factor, True), b, check_finite=False)


def solve_lower(factor: np.ndarray, b) -> np.ndarray:
    return scipy.linalg.solve_triangular(factor, b, lower=True, check_finite=False)


# ---------------------------------------------------------------- optimisation


@dataclass
class NelderMeadOptions:
    xtol: float = 1e-6
    ftol: float = 0.0
    max_evals: int = 2000
    initial_step: float = 0.5


def nelder_mead(
    objective: Callable[[np.ndarray], float],
    x0: Sequence[float],
    opts: NelderMeadOptions | None = None,
) -> tuple[np.ndarray, float]:
    """Minimise ``objective`` from ``x0``.

    Stops when the simplex diameter drops below ``opts.xtol`` (and, if
    ``opts.ftol > 0``, the spread of vertex values below ``ftol``) or after
    ``opts.max_evals`` evaluations. Non-finite values away from ``x0`` are
    treated as +inf.
    """
    opts = opts or NelderMeadOptions()
    x0 = np.atleast_1d(np.asarray(x0, dtype=np.float64))
    n = x0.size
    f0 = float(objective(x0))
    if not np.isfinite(f0):
        raise NonFiniteObjective(f"objective is {f0} at the starting point")

    def f(x):
        v = float(objective(x))
        return v if np.isfinite(v) else np.inf

    sim = np.empty((n + 1, n))
    sim[0] = x0
    for i in range(n):
        v = x0.copy()
        v[i] += opts.initial_step if v[i] == 0 else opts.initial_step * max(abs(v[i]), 1.0)
        sim[i + 1] = v
    fs = np.empty(n + 1)
    fs[0] = f0
    for i in range(1, n + 1):
        fs[i] = f(sim[i])
    evals = n + 1

    # standard coefficients: reflect 1, expand 2, contract 0.5, shrink 0.5
    while evals < opts.max_evals:
        order = np.argsort(fs, kind="stable")
        sim, fs = sim[order], fs[order]
        diam = np.max(np.linalg.norm(sim[1:] - sim[0], axis=1))
        if diam < opts.xtol and (opts.ftol <= 0 or fs[-1] - fs[0] < opts.ftol):
            break
        centroid = sim[:-1].mean(0)
        xr = centroid + (centroid - sim[-1])
        fr = f(xr)
        evals += 1
        if fs[0] <= fr < fs[-2]:
            sim[-1], fs[-1] = xr, fr
            continue
        if fr < fs[0]:
            xe = centroid + 2.0 * (centroid - sim[-1])
            fe = f(xe)
            evals += 1
            if fe < fr:
                sim[-1], fs[-1] = xe, fe
            else:
                sim[-1], fs[-1] = xr, fr
            continue
        if fr < fs[-1]:
            xc = centroid + 0.5 * (xr - centroid)
        else:
            xc = centroid + 0.5 * (sim[-1] - centroid)
        fc = f(xc)
        evals += 1
        if fc < min(fr, fs[-1]):
            sim[-1], fs[-1] = xc, fc
            continue
        for i in range(1, n + 1):
            sim[i] = sim[0] + 0.5 * (sim[i] - sim[0])
            fs[i] = f(sim[i])
        evals += n

    best = int(np.argmin(fs))
    return sim[best].copy(), float(fs[best])


def finite_diff_gradient(objective: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    """Central differences, one coordinate at a time."""
    if not h > 0:
        raise ValueError("h must be positive")
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (objective(x + e) - objective(x - e)) / (2.0 * h)
    return g
