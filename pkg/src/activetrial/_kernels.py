"""Hot loops for the local-bandwidth kernel smoother.

Every kernel exists twice: a numba version (loops) and a numpy version
(vectorised, chunked). ``bandwidth_nw`` and ``nw_fixed`` dispatch on
``_accel.USE_NUMBA``. Both paths use the triangular kernel
``K(u) = max(0, 2 - |u|)``.
"""
import numpy as np

from . import _accel
from ._accel import njit

KERNEL_SUPPORT = 2.0
_CHUNK = 1024


# --------------------------------------------------------------------- numba


@njit(cache=True)
def _step_bandwidth(d_sorted, c1, lip):
    m = d_sorted.shape[0]
    for j in range(m):
        if j + 1 < m and d_sorted[j + 1] == d_sorted[j]:
            continue
        s = np.sqrt(c1 / (j + 1)) / lip
        hi = d_sorted[j + 1] if j + 1 < m else np.inf
        if s < hi:
            return max(d_sorted[j], s), j + 1
    return np.inf, m  # unreachable for m >= 1


@njit(cache=True)
def _partial_bandwidth(d, c1, lip):
    # the answer sits among the few smallest distances: sort a growing prefix
    m = d.shape[0]
    k = 32
    while k < m:
        head = np.sort(np.partition(d, k)[: k + 1])
        # positions 0..k-1 have a known successor; k is only a look-ahead
        for j in range(k):
            if head[j + 1] == head[j]:
                continue
            s = np.sqrt(c1 / (j + 1)) / lip
            if s < head[j + 1]:
                return max(head[j], s), j + 1
        k *= 4
    return _step_bandwidth(np.sort(d), c1, lip)


@njit(cache=True)
def _bandwidth_nw_numba(X, R, Q, c1, lip):
    q, p = Q.shape
    m = X.shape[0]
    h = np.empty(q)
    eta = np.empty(q)
    cnt = np.empty(q, dtype=np.int64)
    d = np.empty(m)
    for i in range(q):
        for j in range(m):
            acc = 0.0
            for k in range(p):
                diff = Q[i, k] - X[j, k]
                acc += diff * diff
            d[j] = np.sqrt(acc)
        hi, ci = _partial_bandwidth(d, c1, lip)
        h[i] = hi
        cnt[i] = ci
        num = 0.0
        den = 0.0
        for j in range(m):
            w = KERNEL_SUPPORT - d[j] / hi
            if w > 0.0:
                num += w * R[j]
                den += w
        eta[i] = num / den if den > 0.0 else np.nan
    return h, eta, cnt


@njit(cache=True)
def _nw_fixed_numba(X, R, Q, h):
    q, p = Q.shape
    m = X.shape[0]
    eta = np.empty(q)
    den_out = np.empty(q)
    for i in range(q):
        num = 0.0
        den = 0.0
        for j in range(m):
            acc = 0.0
            for k in range(p):
                diff = Q[i, k] - X[j, k]
                acc += diff * diff
            w = KERNEL_SUPPORT - np.sqrt(acc) / h
            if w > 0.0:
                num += w * R[j]
                den += w
        den_out[i] = den
        eta[i] = num / den if den > 0.0 else np.nan
    return eta, den_out


@njit(cache=True)
def _ard_gram_numba(D, inv2ls2, gamma0, sigma2):
    p, n, _ = D.shape
    # contiguous sweeps over each (n, n) layer
    acc = np.zeros((n, n))
    for l in range(p):
        w = inv2ls2[l]
        for i in range(n):
            for j in range(n):
                acc[i, j] += D[l, i, j] * w
    Kg = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            Kg[i, j] = gamma0 * np.exp(-acc[i, j])
    K = Kg.copy()
    for i in range(n):
        K[i, i] += sigma2
    return Kg, K


# --------------------------------------------------------------------- numpy


def _distances(Q, X):
    sq = (Q * Q).sum(1)[:, None] + (X * X).sum(1)[None, :] - 2.0 * Q @ X.T
    np.maximum(sq, 0.0, out=sq)
    return np.sqrt(sq)


def _distances_exact(Q, X):
    # the expanded form above loses exact zeros; the bandwidth scan needs ties
    return np.sqrt(((Q[:, None, :] - X[None, :, :]) ** 2).sum(-1))


def _bandwidth_nw_numpy(X, R, Q, c1, lip):
    q = Q.shape[0]
    m = X.shape[0]
    h = np.empty(q)
    eta = np.empty(q)
    cnt = np.empty(q, dtype=np.int64)
    s = np.sqrt(c1 / np.arange(1, m + 1)) / lip
    for lo in range(0, q, _CHUNK):
        sl = slice(lo, min(lo + _CHUNK, q))
        D = _distances_exact(Q[sl], X)
        Ds = np.sort(D, axis=1)
        nxt = np.concatenate([Ds[:, 1:], np.full((Ds.shape[0], 1), np.inf)], axis=1)
        ok = (nxt > Ds) & (s[None, :] < nxt)
        j = ok.argmax(axis=1)
        rows = np.arange(Ds.shape[0])
        hb = np.maximum(Ds[rows, j], s[j])
        W = np.clip(KERNEL_SUPPORT - D / hb[:, None], 0.0, None)
        den = W.sum(1)
        with np.errstate(invalid="ignore", divide="ignore"):
            eta[sl] = np.where(den > 0, (W @ R) / den, np.nan)
        h[sl] = hb
        cnt[sl] = j + 1
    return h, eta, cnt


def _nw_fixed_numpy(X, R, Q, h):
    q = Q.shape[0]
    eta = np.empty(q)
    den_out = np.empty(q)
    for lo in range(0, q, _CHUNK):
        sl = slice(lo, min(lo + _CHUNK, q))
        W = np.clip(KERNEL_SUPPORT - _distances(Q[sl], X) / h, 0.0, None)
        den = W.sum(1)
        with np.errstate(invalid="ignore", divide="ignore"):
            eta[sl] = np.where(den > 0, (W @ R) / den, np.nan)
        den_out[sl] = den
    return eta, den_out


def _ard_gram_numpy(D, inv2ls2, gamma0, sigma2):
    Kg = gamma0 * np.exp(-np.tensordot(inv2ls2, D, axes=1))
    K = Kg.copy()
    K[np.diag_indices_from(K)] += sigma2
    return Kg, K


# ------------------------------------------------------------------ dispatch


def _prep(X, R, Q):
    return (
        np.ascontiguousarray(X, dtype=np.float64),
        np.ascontiguousarray(R, dtype=np.float64),
        np.ascontiguousarray(np.atleast_2d(Q), dtype=np.float64),
    )


def bandwidth_nw(X, R, Q, c1, lip, use_numba=None):
    """Local bandwidth, NW estimate and in-ball count for each query row.

    ``X``/``R`` are one arm's covariates and outcomes (at least one row).
    """
    X, R, Q = _prep(X, R, Q)
    if use_numba is None:
        use_numba = _accel.USE_NUMBA
    fn = _bandwidth_nw_numba if use_numba else _bandwidth_nw_numpy
    return fn(X, R, Q, float(c1), float(lip))


def nw_fixed(X, R, Q, h, use_numba=None):
    """NW estimate with one global bandwidth; NaN where no point has weight."""
    X, R, Q = _prep(X, R, Q)
    if use_numba is None:
        use_numba = _accel.USE_NUMBA
    fn = _nw_fixed_numba if use_numba else _nw_fixed_numpy
    return fn(X, R, Q, float(h))


def coordinate_sq_diffs(X) -> np.ndarray:
    """Stack ``D[l, i, j] = (X[i, l] - X[j, l])^2`` of shape ``(p, n, n)``."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    return np.ascontiguousarray(((X.T[:, :, None] - X.T[:, None, :]) ** 2))


def ard_gram(D, lengthscales, gamma0, sigma2, use_numba=None):
    """Signal Gram ``Kg`` and ``Kg + sigma2 I`` from a squared-difference stack.

    Defaults to numpy: its vectorised ``exp`` beats the compiled loop here
    (see benchmarks/bench_kernels.py). Pass ``use_numba=True`` to force it.
    """
    inv2ls2 = 0.5 / np.asarray(lengthscales, dtype=np.float64) ** 2
    if use_numba is None:
        use_numba = False
    fn = _ard_gram_numba if use_numba else _ard_gram_numpy
    return fn(D, inv2ls2, float(gamma0), float(sigma2))
