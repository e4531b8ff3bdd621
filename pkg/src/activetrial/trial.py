"""Staged active recruitment.

Stage 0 enrolls ``N0`` subjects unconditionally. Stage ``k >= 1`` screens up
to ``N_k = 2 N_{k-1}`` arrivals one at a time against the estimator fitted at
the end of the previous stage: an arrival is randomised iff 0 lies in
``[f_hat - delta, f_hat + delta]``. The remaining budget drops by one per
enrollment. The trial stops when the budget is spent, the source runs dry,
or a stage screens ``break_factor * N_k`` arrivals without enrolling anyone.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .gp import GpConfig, GpContrastModel
from .kernel import ContrastEstimate, KernelConfig, KernelContrastModel
from .numerics import make_rng
from .scenarios import Dataset, EmptyPool, ScenarioSpec

AL_BV = "AL-BV"
AL_GP = "AL-GP"
ESTIMATORS = (AL_BV, AL_GP)

ENROLL = "enroll"
REJECT = "reject"
INITIAL = "initial"

STOP_BUDGET = "budget_spent"
STOP_EMPTY = "empty_active_set"
STOP_EXHAUSTED = "source_exhausted"


class PoolExhausted(RuntimeError):
    pass


def default_n0(N: int) -> int:
    return 2 * math.isqrt(int(N))


@dataclass(frozen=True)
class TrialConfig:
    N: int
    N0: int | None = None
    alpha: float = 0.05
    estimator: str = AL_GP
    kernel: KernelConfig = field(default_factory=KernelConfig)
    gp: GpConfig = field(default_factory=GpConfig)
    max_screened: int | None = None
    seed: int = 0
    stage_only: bool = False
    break_factor: int = 4
    standardize: bool | None = None
    batch: int = 256

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"estimator must be one of {ESTIMATORS}, got {self.estimator!r}")
        if not 0 < self.n0 <= self.N:
            raise ValueError(f"need 0 < N0 <= N, got N0={self.n0}, N={self.N}")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.break_factor < 1:
            raise ValueError("break_factor must be at least 1")

    @property
    def n0(self) -> int:
        return default_n0(self.N) if self.N0 is None else int(self.N0)

    def echo(self) -> dict:
        d = asdict(self)
        d["N0"] = self.n0
        return d


@dataclass(frozen=True)
class StageRecord:
    k: int
    N_k: int
    screened: int
    enrolled: int
    rejected: int
    lb_after: int
    snapshot: int


@dataclass
class AuditLog:
    stage: list = field(default_factory=list)
    candidate_index: list = field(default_factory=list)
    x: list = field(default_factory=list)
    f_hat: list = field(default_factory=list)
    delta: list = field(default_factory=list)
    decision: list = field(default_factory=list)
    arm: list = field(default_factory=list)
    outcome: list = field(default_factory=list)

    def add(self, stage, idx, x, f_hat, delta, decision, arm=0, outcome=math.nan):
        self.stage.append(stage)
        self.candidate_index.append(idx)
        self.x.append(np.asarray(x, dtype=np.float64))
        self.f_hat.append(float(f_hat))
        self.delta.append(float(delta))
        self.decision.append(decision)
        self.arm.append(int(arm))
        self.outcome.append(float(outcome))

    def __len__(self):
        return len(self.stage)

    def arrays(self) -> dict:
        p = self.x[0].size if self.x else 0
        return {
            "stage": np.asarray(self.stage, dtype=np.int64),
            "candidate_index": np.asarray(self.candidate_index, dtype=np.int64),
            "x": np.vstack(self.x) if self.x else np.empty((0, p)),
            "f_hat": np.asarray(self.f_hat),
            "delta": np.asarray(self.delta),
            "decision": np.asarray(self.decision),
            "arm": np.asarray(self.arm, dtype=np.int64),
            "outcome": np.asarray(self.outcome),
        }


def _fmt(v: float) -> str:
    if isinstance(v, float) and math.isnan(v):
        return ""
    return repr(float(v))


@dataclass
class TrialResult:
    config: TrialConfig
    seed: int | None
    stages: list[StageRecord]
    enrolled: Dataset
    model: object
    audit: AuditLog
    stop_reason: str
    scaler: tuple[np.ndarray, np.ndarray] | None = None

    @property
    def total_screened(self) -> int:
        return len(self.audit)

    @property
    def total_enrolled(self) -> int:
        return self.enrolled.n

    @property
    def total_rejected(self) -> int:
        return sum(1 for d in self.audit.decision if d == REJECT)

    def _scale(self, Q):
        Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
        if self.scaler is None:
            return Q
        return (Q - self.scaler[0]) / self.scaler[1]

    def contrast(self, Q) -> np.ndarray:
        return self.model.contrast(self._scale(Q))

    def rule(self, Q) -> np.ndarray:
        """Learned rule ``sign(f_hat)``, ties to +1."""
        return np.where(self.contrast(Q) >= 0.0, 1, -1)

    def summary(self) -> dict:
        return {
            "seed": self.seed,
            "stop_reason": self.stop_reason,
            "totals": {
                "screened": self.total_screened,
                "enrolled": self.total_enrolled,
                "rejected": self.total_rejected,
            },
            "stages": [asdict(s) for s in self.stages],
            "config": self.config.echo(),
        }

    def summary_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True, indent=2, default=str)

    def audit_csv(self) -> str:
        buf = io.StringIO()
        p = self.enrolled.p
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["stage", "candidate_index", *[f"x_{i + 1}" for i in range(p)],
                    "f_hat", "delta", "decision", "arm", "outcome"])
        a = self.audit
        for i in range(len(a)):
            w.writerow([a.stage[i], a.candidate_index[i], *(_fmt(v) for v in a.x[i]),
                        _fmt(a.f_hat[i]), _fmt(a.delta[i]), a.decision[i],
                        a.arm[i] if a.arm[i] else "", _fmt(a.outcome[i])])
        return buf.getvalue()


# ----------------------------------------------------------------- screening


def screen_candidate(estimate: ContrastEstimate | tuple[float, float]) -> str:
    """``ENROLL`` iff 0 lies in the closed interval ``f_hat -/+ delta``."""
    f_hat, delta = (estimate.f_hat, estimate.delta) if isinstance(estimate, ContrastEstimate) else estimate
    return ENROLL if (f_hat - delta <= 0.0 <= f_hat + delta) else REJECT


def _screen_arrays(f_hat, delta):
    return (f_hat - delta <= 0.0) & (0.0 <= f_hat + delta)


def make_estimator(cfg: TrialConfig) -> Callable:
    if cfg.estimator == AL_BV:
        return lambda data, previous=None: KernelContrastModel(data, cfg.kernel)
    return lambda data, previous=None: GpContrastModel(data, cfg.gp, previous=previous)


# ------------------------------------------------------------------- sources


class _ScenarioSource:
    def __init__(self, spec: ScenarioSpec, rng):
        self.spec = spec
        self.rng = rng
        self.p = spec.p
        self.drawn = 0

    def initial(self, n):
        X = self.spec.sample_covariates(n, self.rng)
        self.drawn += n
        return X, np.arange(n)

    def next(self, n):
        X = self.spec.sample_covariates(n, self.rng)
        idx = np.arange(self.drawn, self.drawn + n)
        self.drawn += n
        return X, idx

    def treat(self, x, idx):
        a = 1 if self.rng.random() < 0.5 else -1
        return a, self.spec.sample_outcome(x, a, self.rng)


class _PoolSource:
    def __init__(self, pool: Dataset, rng):
        self.pool = pool
        self.rng = rng
        self.p = pool.p
        self.queue = np.arange(pool.n)
        self.pos = 0

    def initial(self, n):
        n = min(n, self.pool.n)
        pick = np.sort(self.rng.choice(self.pool.n, size=n, replace=False))
        rest = np.setdiff1d(np.arange(self.pool.n), pick, assume_unique=True)
        self.queue = rest
        return self.pool.X[pick], pick

    def next(self, n):
        idx = self.queue[self.pos:self.pos + n]
        self.pos += idx.size
        return self.pool.X[idx], idx

    def treat(self, x, idx):
        return int(self.pool.A[idx]), float(self.pool.R[idx])


# ---------------------------------------------------------------------- loop


def _run(cfg: TrialConfig, source, rng, scaler=None, propensity=0.5, direction="maximize") -> TrialResult:
    fit = make_estimator(cfg)
    audit = AuditLog()
    xs, arms, outs = [], [], []
    stage_of = []

    def to_model(X):
        return X if scaler is None else (X - scaler[0]) / scaler[1]

    def dataset(sel=None) -> Dataset:
        p = source.p
        if sel is None:
            sel = range(len(xs))
        sel = list(sel)
        X = np.vstack([xs[i] for i in sel]) if sel else np.empty((0, p))
        return Dataset(X, [arms[i] for i in sel], [outs[i] for i in sel],
                       propensity=propensity, outcome_direction=direction)

    def model_data(stage_k):
        if cfg.stage_only:
            d = dataset(i for i, s in enumerate(stage_of) if s == stage_k)
        else:
            d = dataset()
        return Dataset(to_model(d.X), d.A, d.R, propensity=propensity, outcome_direction=direction)

    N0 = cfg.n0
    X0, idx0 = source.initial(N0)
    for x, i in zip(X0, idx0):
        a, r = source.treat(x, i)
        audit.add(0, int(i), x, 0.0, math.inf, INITIAL, a, r)
        xs.append(x)
        arms.append(a)
        outs.append(r)
        stage_of.append(0)
    n_init = len(xs)
    LB = cfg.N - n_init
    stages = [StageRecord(0, N0, n_init, n_init, 0, LB, 0)]
    model = fit(model_data(0))
    stop = STOP_BUDGET
    if n_init < N0:
        stop = STOP_EXHAUSTED
    max_screened = cfg.max_screened
    Nk = N0
    k = 0
    while LB > 0 and stop != STOP_EXHAUSTED:
        k += 1
        Nk *= 2
        quota, screened, enrolled = Nk, 0, 0
        exhausted = False
        while LB > 0:
            if screened >= quota:
                if enrolled == 0 and quota < cfg.break_factor * Nk:
                    quota = cfg.break_factor * Nk
                    continue
                break
            want = min(quota - screened, cfg.batch)
            if max_screened is not None:
                want = min(want, max_screened - len(audit))
            if want <= 0:
                exhausted = True
                break
            Xb, ib = source.next(want)
            if Xb.shape[0] == 0:
                exhausted = True
                break
            f_hat, delta, _ = model.ci_batch(to_model(Xb))
            keep = _screen_arrays(f_hat, delta)
            for j in range(Xb.shape[0]):
                if LB <= 0:
                    break
                screened += 1
                if keep[j]:
                    a, r = source.treat(Xb[j], ib[j])
                    audit.add(k, int(ib[j]), Xb[j], f_hat[j], delta[j], ENROLL, a, r)
                    xs.append(Xb[j])
                    arms.append(a)
                    outs.append(r)
                    stage_of.append(k)
                    enrolled += 1
                    LB -= 1
                else:
                    audit.add(k, int(ib[j]), Xb[j], f_hat[j], delta[j], REJECT)
        stages.append(StageRecord(k, Nk, screened, enrolled, screened - enrolled, LB, k if enrolled else k - 1))
        if enrolled:
            model = fit(model_data(k), model)
        if exhausted:
            stop = STOP_EXHAUSTED
            break
        if enrolled == 0 and LB > 0:
            stop = STOP_EMPTY
            break

    return TrialResult(cfg, None, stages, dataset(), model, audit, stop, scaler)


def run_initial_stage(cfg: TrialConfig, source: ScenarioSpec | Dataset, rng=None):
    """Stage 0 alone: ``(S0, StageRecord)``."""
    rng = make_rng(cfg.seed if rng is None else rng)
    if isinstance(source, Dataset):
        if source.n < cfg.n0:
            raise PoolExhausted(f"pool has {source.n} rows, initial stage needs {cfg.n0}")
        src = _PoolSource(source, rng)
    else:
        src = _ScenarioSource(source, rng)
    X0, idx0 = src.initial(cfg.n0)
    A, R = [], []
    for x, i in zip(X0, idx0):
        a, r = src.treat(x, i)
        A.append(a)
        R.append(r)
    S0 = Dataset(X0, A, R)
    return S0, StageRecord(0, cfg.n0, S0.n, S0.n, 0, cfg.N - S0.n, 0)


def run_active_trial(cfg: TrialConfig, source: ScenarioSpec | Dataset, rng=None) -> TrialResult:
    """Run the staged trial against a scenario (fresh arrivals) or a pool (replay)."""
    if isinstance(source, Dataset):
        return replay_pool(cfg, source, rng)
    seed = cfg.seed if rng is None else None
    rng = make_rng(cfg.seed if rng is None else rng)
    std = bool(cfg.standardize)
    scaler = None
    if std:
        raise ValueError("standardize applies to pool replay only; scenarios are pre-scaled")
    res = _run(cfg, _ScenarioSource(source, rng), rng, scaler)
    res.seed = seed
    return res


def pool_scaler(pool: Dataset):
    mu = pool.X.mean(0)
    sd = pool.X.std(0)
    return mu, np.where(sd > 0, sd, 1.0)


def replay_pool(cfg: TrialConfig, pool: Dataset, rng=None) -> TrialResult:
    """Replay a fixed pool: random initial subset, then rows in file order.

    Enrollees keep their recorded arm and outcome. ``cfg.N`` is the total
    enrollment cap (initial subset plus additional budget).
    """
    if pool.n == 0:
        raise EmptyPool("pool has no rows")
    seed = cfg.seed if rng is None else None
    rng = make_rng(cfg.seed if rng is None else rng)
    std = True if cfg.standardize is None else cfg.standardize
    scaler = pool_scaler(pool) if std else None
    res = _run(cfg, _PoolSource(pool, rng), rng, scaler,
               propensity=pool.propensity, direction=pool.outcome_direction)
    res.seed = seed
    return res
