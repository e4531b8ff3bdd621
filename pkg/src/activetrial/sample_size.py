"""Sample-size planning by inverting the excess-value bound.

The bound is ``C N^(-r) log(N/alpha)^theta`` with ``r = (1+gamma)/(2+d-gamma)``.
The constant ``C`` comes from a bootstrap of a pilot pool (``bootstrap_ctilde``)
or from calibration against a known cell.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .evaluation import NoConcordantSubjects, weighted_mean_outcome
from .numerics import make_rng
from .scenarios import MINIMIZE, Dataset

N_CAP = 10**9
_REL_TOL = 1e-12


class TargetUnreachable(ValueError):
    pass


def theta_exponent(d: float, gamma: float) -> float:
    """Power of the log factor: ``(4+2d-gamma)(1+gamma) / ((2+d)(2+d-gamma))``."""
    if d <= 0:
        raise ValueError("d must be positive")
    if gamma < 0 or gamma > d:
        raise ValueError(f"gamma must lie in [0, d], got gamma={gamma}, d={d}")
    return (4.0 + 2.0 * d - gamma) * (1.0 + gamma) / ((2.0 + d) * (2.0 + d - gamma))


def rate_power(d: float, gamma: float) -> float:
    """``r`` in ``N^(-r)``."""
    return (1.0 + gamma) / (2.0 + d - gamma)


@dataclass(frozen=True)
class SampleSizeInputs:
    """Planning inputs.

    ``rho * V0`` and ``epsilon`` are both closeness targets; the smaller one is
    used. ``beta`` (power) is carried for the record only: it is folded into
    the ``rho * V0`` target and not used in any computation.
    """

    d: float
    gamma: float
    alpha: float
    C_tilde: float
    epsilon: float
    rho: float = math.inf
    V0: float = 1.0
    N0: int = 1
    beta: float | None = None

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.C_tilde < 0:
            raise ValueError("C_tilde must be nonnegative")
        if not self.target > 0:
            raise ValueError("target min(rho*V0, epsilon) must be positive")
        if self.N0 < 1:
            raise ValueError("N0 must be at least 1")
        theta_exponent(self.d, self.gamma)

    @property
    def target(self) -> float:
        return min(self.rho * self.V0, self.epsilon)

    @property
    def theta(self) -> float:
        return theta_exponent(self.d, self.gamma)


def _unit_bound(N: float, d: float, gamma: float, alpha: float) -> float:
    return N ** (-rate_power(d, gamma)) * math.log(N / alpha) ** theta_exponent(d, gamma)


def bound_value(N: float, inputs: SampleSizeInputs) -> float:
    if not N / inputs.alpha > 1:
        raise ValueError("bound needs N / alpha > 1")
    return inputs.C_tilde * _unit_bound(N, inputs.d, inputs.gamma, inputs.alpha)


def bound_maximizer(inputs: SampleSizeInputs) -> float:
    """The bound increases up to ``alpha * exp(theta / r)`` and decreases after."""
    return inputs.alpha * math.exp(inputs.theta / rate_power(inputs.d, inputs.gamma))


def calibrate_ctilde(N: float, value: float, d: float, gamma: float, alpha: float) -> float:
    """``C`` such that ``bound(N) == value``."""
    return value / _unit_bound(N, d, gamma, alpha)


def invert_bound(inputs: SampleSizeInputs) -> int:
    """Smallest integer ``N`` on the decreasing branch with ``bound(N) <= target``."""
    target = inputs.target

    def ok(N):
        return bound_value(N, inputs) <= target * (1.0 + _REL_TOL)

    lo = max(inputs.N0, math.ceil(math.e * inputs.alpha) + 1, math.ceil(bound_maximizer(inputs)))
    if ok(lo):
        return lo
    hi = lo
    while not ok(hi):
        if hi >= N_CAP:
            raise TargetUnreachable(f"bound stays above {target} up to N = {N_CAP}")
        lo, hi = hi, min(2 * hi, N_CAP)
    # ok(hi) and not ok(lo)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


# --------------------------------------------------------------- bootstrap


@dataclass
class BootstrapResult:
    c_tilde: float
    diff: float
    values: np.ndarray
    best: int
    dropped: list[tuple[int, str]] = field(default_factory=list)
    N: int = 0
    alpha: float = 0.0
    d: float = 0.0
    gamma: float = 0.0

    def c_tilde_for(self, gamma: float) -> float:
        """The constant for another margin exponent, from the same ``diff``."""
        return self.diff / _unit_bound(self.N, self.d, gamma, self.alpha)


def _default_learner(trial_cfg):
    from .trial import replay_pool

    def learn(sample: Dataset, rng):
        return replay_pool(trial_cfg, sample, rng).rule

    return learn


def bootstrap_ctilde(pool: Dataset, trial_cfg, B: int, rng, *, d: float, gamma: float,
                     alpha: float | None = None, N: int | None = None,
                     learner: Callable | None = None, details: bool = False):
    """Bootstrap estimate of the bound constant.

    Each of ``B`` resamples of ``pool`` runs a trial (or ``learner(sample,
    rng)``); every learned rule is scored on the original pool by the weighted
    mean outcome. ``diff`` is the 80th percentile of ``|V_k - V_best|`` over
    ``k != best``; ``best`` is the argmin or argmax per the pool's outcome
    direction. ``N`` and ``alpha`` default to the trial configuration.
    """
    if B < 2:
        raise ValueError("B must be at least 2")
    N = int(trial_cfg.N if N is None else N)
    alpha = float(trial_cfg.alpha if alpha is None else alpha)
    learner = learner or _default_learner(trial_cfg)
    rng = make_rng(rng)
    seeds = rng.bit_generator.seed_seq.spawn(B)
    values, dropped = [], []
    for b, ss in enumerate(seeds):
        r = make_rng(ss)
        sample = pool.subset(r.integers(0, pool.n, size=pool.n))
        try:
            rule = learner(sample, r)
            values.append(weighted_mean_outcome(pool, rule))
        except (np.linalg.LinAlgError, ValueError, RuntimeError, NoConcordantSubjects) as exc:
            dropped.append((b, f"{type(exc).__name__}: {exc}"))
    if len(values) < 2:
        raise RuntimeError(f"only {len(values)} bootstrap fits succeeded; dropped {dropped}")
    v = np.asarray(values)
    best = int(np.argmin(v) if pool.outcome_direction == MINIMIZE else np.argmax(v))
    gaps = np.sort(np.abs(np.delete(v, best) - v[best]))
    diff = float(np.percentile(gaps, 80))
    c = diff / _unit_bound(N, d, gamma, alpha)
    res = BootstrapResult(c, diff, v, best, dropped, N, alpha, d, gamma)
    return res if details else c


# ------------------------------------------------------------------- table


@dataclass
class SampleSizeTable:
    gammas: list[float]
    epsilons: list[float]
    cells: dict[tuple[float, float], int | None]
    c_tilde: dict[float, float]
    base: SampleSizeInputs
    mode: str

    def value(self, gamma: float, epsilon: float) -> int | None:
        return self.cells[(gamma, epsilon)]

    def to_csv(self, header: str = "") -> str:
        buf = io.StringIO()
        buf.write(header)
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epsilon", *[f"gamma={g:g}" for g in self.gammas]])
        for e in self.epsilons:
            w.writerow([f"{e:g}", *["" if self.cells[(g, e)] is None else self.cells[(g, e)]
                                    for g in self.gammas]])
        return buf.getvalue()

    def sidecar(self) -> dict:
        return {
            "d": self.base.d,
            "alpha": self.base.alpha,
            "N0": self.base.N0,
            "calibration": self.mode,
            "C_tilde": {f"{g:g}": c for g, c in self.c_tilde.items()},
        }


def sample_size_table(base: SampleSizeInputs, gammas: Sequence[float], epsilons: Sequence[float],
                      c_tilde_for: Callable[[float], float] | None = None,
                      mode: str = "fixed") -> SampleSizeTable:
    """``invert_bound`` over a (gamma, epsilon) grid.

    ``c_tilde_for(gamma)`` supplies a per-gamma constant (for instance
    ``BootstrapResult.c_tilde_for``); without it ``base.C_tilde`` is used in
    every column. Unreachable cells are ``None``.
    """
    if not gammas or not epsilons:
        raise ValueError("grid is empty")
    cells, consts = {}, {}
    for g in gammas:
        c = base.C_tilde if c_tilde_for is None else float(c_tilde_for(g))
        consts[g] = c
        for e in epsilons:
            inp = replace(base, gamma=g, epsilon=e, C_tilde=c)
            try:
                cells[(g, e)] = invert_bound(inp)
            except TargetUnreachable:
                cells[(g, e)] = None
    if c_tilde_for is not None and mode == "fixed":
        mode = "per-gamma"
    return SampleSizeTable(list(gammas), list(epsilons), cells, consts, base, mode)


def inputs_dict(inputs: SampleSizeInputs) -> dict:
    return asdict(inputs)
