"""Local-bandwidth Nadaraya-Watson contrast estimates (the AL-BV backend).

For each arm ``j`` and query ``x0`` the bandwidth is the smallest ``h`` with
``L^2 h^2 >= C1 / #{i: |x0 - X_i| <= h, A_i = j}``; the contrast interval
radius is ``t * L * max(h_{+1}, h_{-1})``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from ._kernels import KERNEL_SUPPORT, bandwidth_nw, nw_fixed
from .scenarios import Dataset


class NoArmData(ValueError):
    pass


class ZeroDenominator(ValueError):
    pass


class TooFewPoints(ValueError):
    pass


@dataclass(frozen=True)
class KernelConfig:
    """Smoother constants.

    The kernel is fixed to ``K(u) = max(0, 2 - |u|)``: support radius 2,
    Lipschitz constant 1, and ``K >= 1`` on the unit ball.
    """

    L: float = 1.0
    C1: float = 1.0
    t: float = 0.5
    standardize: bool = False
    ell_K: float = 1.0
    R_K: float = KERNEL_SUPPORT
    L_K: float = 1.0

    def __post_init__(self):
        for name in ("L", "C1", "t"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class ContrastEstimate:
    f_hat: float
    delta: float
    h_plus: float = math.nan
    h_minus: float = math.nan
    count_plus: int = 0
    count_minus: int = 0

    @property
    def interval(self) -> tuple[float, float]:
        return self.f_hat - self.delta, self.f_hat + self.delta


@dataclass(frozen=True)
class StagedBandwidth:
    h_k: float
    delta_k: float
    k: int | None
    d: int
    N: int
    alpha: float
    C: float


def _as_query(x0) -> np.ndarray:
    return np.atleast_2d(np.asarray(x0, dtype=np.float64))


def local_bandwidth(data: Dataset, x0, arm: int, cfg: KernelConfig = KernelConfig()) -> float:
    Xa, Ra = data.arm(arm)
    if Xa.shape[0] == 0:
        raise NoArmData(f"no observations in arm {arm}")
    h, _, _ = bandwidth_nw(Xa, Ra, _as_query(x0), cfg.C1, cfg.L)
    return float(h[0])


def nw_estimate(data: Dataset, x0, arm: int, h: float) -> float:
    if not h > 0:
        raise ValueError("h must be positive")
    Xa, Ra = data.arm(arm)
    if Xa.shape[0] == 0:
        raise ZeroDenominator(f"no observations in arm {arm}")
    eta, den = nw_fixed(Xa, Ra, _as_query(x0), h)
    if not den[0] > 0:
        raise ZeroDenominator(f"no arm-{arm} point within {KERNEL_SUPPORT}*h of x0")
    return float(eta[0])


class KernelContrastModel:
    """Per-arm local-bandwidth smoother evaluated in batches of query points."""

    name = "AL-BV"

    def __init__(self, data: Dataset, cfg: KernelConfig = KernelConfig()):
        self.cfg = cfg
        self.n = data.n
        self._arms = {a: data.arm(a) for a in (1, -1)}

    def arm_fit(self, arm: int, Q):
        """Bandwidth, estimate and in-ball count for one arm, or ``None`` if empty."""
        Xa, Ra = self._arms[arm]
        if Xa.shape[0] == 0:
            return None
        return bandwidth_nw(Xa, Ra, Q, self.cfg.C1, self.cfg.L)

    def ci_batch(self, Q):
        """``(f_hat, delta, diagnostics)`` for every row of ``Q``.

        An empty arm yields ``f_hat = 0`` and ``delta = inf``.
        """
        Q = _as_query(Q)
        q = Q.shape[0]
        plus = self.arm_fit(1, Q)
        minus = self.arm_fit(-1, Q)
        if plus is None or minus is None:
            diag = {
                "h_plus": plus[0] if plus else np.full(q, np.nan),
                "h_minus": minus[0] if minus else np.full(q, np.nan),
                "count_plus": plus[2] if plus else np.zeros(q, dtype=np.int64),
                "count_minus": minus[2] if minus else np.zeros(q, dtype=np.int64),
            }
            return np.zeros(q), np.full(q, np.inf), diag
        f_hat = plus[1] - minus[1]
        delta = self.cfg.t * self.cfg.L * np.maximum(plus[0], minus[0])
        diag = {"h_plus": plus[0], "h_minus": minus[0], "count_plus": plus[2], "count_minus": minus[2]}
        return f_hat, delta, diag

    def contrast(self, Q) -> np.ndarray:
        return self.ci_batch(Q)[0]

    def rule(self, Q) -> np.ndarray:
        return np.where(self.contrast(Q) >= 0.0, 1, -1)

    def ci(self, x0) -> ContrastEstimate:
        f, d, diag = self.ci_batch(x0)
        return ContrastEstimate(
            f_hat=float(f[0]), delta=float(d[0]),
            h_plus=float(diag["h_plus"][0]), h_minus=float(diag["h_minus"][0]),
            count_plus=int(diag["count_plus"][0]), count_minus=int(diag["count_minus"][0]),
        )


def contrast_ci(data: Dataset, x0, cfg: KernelConfig = KernelConfig()) -> ContrastEstimate:
    return KernelContrastModel(data, cfg).ci(x0)


# ----------------------------------------------------------- theory helpers


def staged_bandwidth(N_k: int, d: int, N: int, alpha: float, C: float, k: int | None = None) -> StagedBandwidth:
    """Stage bandwidth ``[(log(N/alpha) + d log N_k) / N_k]^(1/(d+2))``, radius ``4 C h``."""
    if N_k < 2:
        raise ValueError("N_k must be at least 2")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if d < 1:
        raise ValueError("d must be at least 1")
    h = ((math.log(N / alpha) + d * math.log(N_k)) / N_k) ** (1.0 / (d + 2))
    return StagedBandwidth(h_k=h, delta_k=4.0 * C * h, k=k, d=d, N=N, alpha=alpha, C=C)


def theoretical_bandwidth(n: int, d: int, t: float = 1.0, mass: float = 1.0) -> float:
    """Global bandwidth ``{mass (t + d log(n/mass)) / n}^(1/(d+2))``."""
    return (mass * (t + d * math.log(n / mass)) / n) ** (1.0 / (d + 2))


def nw_fixed_contrast(data: Dataset, Q, h: float) -> np.ndarray:
    """Contrast estimate with one global bandwidth for both arms."""
    Q = _as_query(Q)
    out = []
    for a in (1, -1):
        Xa, Ra = data.arm(a)
        eta, _ = nw_fixed(Xa, Ra, Q, h)
        out.append(eta)
    return out[0] - out[1]


def intrinsic_dimension(points, k_neighbors: int = 20, n_anchors: int = 100, frac: float = 0.1) -> int:
    """Local-SVD dimension estimate.

    At each anchor the ``k_neighbors``-nearest cloud is centred and its
    singular values counted above ``frac`` times the largest; the median count
    over anchors is returned. Anchors are evenly spaced row indices.
    """
    P = np.asarray(points, dtype=np.float64)
    if P.ndim != 2:
        raise ValueError("points must be a 2-d array")
    n = P.shape[0]
    if n < k_neighbors + 1:
        raise TooFewPoints(f"need at least {k_neighbors + 1} points, got {n}")
    tree = cKDTree(P)
    anchors = np.unique(np.linspace(0, n - 1, min(n_anchors, n)).astype(int))
    _, nbrs = tree.query(P[anchors], k=k_neighbors + 1)
    counts = []
    for row in nbrs:
        cloud = P[row] - P[row].mean(0)
        s = np.linalg.svd(cloud, compute_uv=False)
        counts.append(int(np.sum(s > frac * s[0])) if s[0] > 0 else 0)
    return int(np.round(np.median(counts)))
