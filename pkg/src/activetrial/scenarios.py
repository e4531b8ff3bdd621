"""Synthetic data-generating processes, contrast oracles and pool CSV ingestion.

All six scenarios share the outcome model ``R ~ N(m0(X) + T0(X, A), 1)`` with
``T0(x, a) = a * f(x) / 2`` so that the contrast ``f(x) = T0(x, 1) - T0(x, -1)``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Callable, Iterator, NamedTuple

import numpy as np

SCENARIO6_FLOOR = -1e10

MAXIMIZE = "maximize"
MINIMIZE = "minimize"


class PoolError(ValueError):
    pass


class MalformedRow(PoolError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line


class UnknownArmValue(PoolError):
    def __init__(self, line: int, value: str):
        super().__init__(f"line {line}: arm must be -1 or 1, got {value!r}")
        self.line = line


class EmptyPool(PoolError):
    pass


class Observation(NamedTuple):
    x: np.ndarray
    a: int
    r: float


@dataclass(frozen=True, eq=False)
class Dataset:
    """Enrolled or pooled subjects as parallel arrays."""

    X: np.ndarray
    A: np.ndarray
    R: np.ndarray
    propensity: float = 0.5
    outcome_direction: str = MAXIMIZE

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(-1, 1) if X.size else X.reshape(0, 1)
        A = np.asarray(self.A, dtype=np.int64).reshape(-1)
        R = np.asarray(self.R, dtype=np.float64).reshape(-1)
        if not (X.shape[0] == A.shape[0] == R.shape[0]):
            raise ValueError(f"length mismatch: X {X.shape[0]}, A {A.shape[0]}, R {R.shape[0]}")
        if A.size and not np.isin(A, (-1, 1)).all():
            raise ValueError("arms must be -1 or +1")
        if not 0.0 < self.propensity < 1.0:
            raise ValueError("propensity must lie in (0, 1)")
        if self.outcome_direction not in (MAXIMIZE, MINIMIZE):
            raise ValueError(f"unknown outcome_direction {self.outcome_direction!r}")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "R", R)

    @classmethod
    def empty(cls, p: int, **kw) -> "Dataset":
        return cls(np.empty((0, p)), np.empty(0, dtype=np.int64), np.empty(0), **kw)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def __len__(self) -> int:
        return self.n

    def __iter__(self) -> Iterator[Observation]:
        for i in range(self.n):
            yield Observation(self.X[i], int(self.A[i]), float(self.R[i]))

    @property
    def observations(self) -> list[Observation]:
        return list(self)

    def arm(self, a: int) -> tuple[np.ndarray, np.ndarray]:
        mask = self.A == a
        return self.X[mask], self.R[mask]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return replace(self, X=self.X[idx], A=self.A[idx], R=self.R[idx])

    def propensity_of(self, a) -> np.ndarray:
        """P(A = a) for each entry of ``a``."""
        a = np.asarray(a)
        return np.where(a == 1, self.propensity, 1.0 - self.propensity)


# ------------------------------------------------------------------ scenarios


def _uniform_cube(p):
    def draw(n, rng):
        return rng.uniform(-1.0, 1.0, size=(n, p))

    return draw


def _normal(p):
    def draw(n, rng):
        return rng.standard_normal(size=(n, p))

    return draw


def _unit_sphere(n, rng):
    out = np.empty((n, 3))
    filled = 0
    while filled < n:
        need = n - filled
        U = rng.uniform(-1.0, 1.0, size=(2 * need + 8, 3))
        r = np.linalg.norm(U, axis=1)
        keep = U[(r <= 1.0) & (r > 0.0)][:need]
        rk = np.linalg.norm(keep, axis=1)
        out[filled:filled + keep.shape[0]] = keep / rk[:, None]
        filled += keep.shape[0]
    return out


def _f1(X):
    return 1.0 - X[:, 0] - X[:, 1]


def _f2(X):
    r2 = X[:, 0] ** 2 + X[:, 1] ** 2
    return 1.0 - 2.0 * (1.0 - r2) ** 2


def _f3(X):
    return 3.0 * X[:, 0] * X[:, 1] * (1.0 + X[:, 2])


def _f4(X):
    # 1-based: even l -> columns 1, 3, 5, 7
    return 0.4 * (X[:, 1::2].sum(1) - X[:, 0::2].sum(1))


def _f5(X):
    return X[:, 0] ** 2 - 0.25


def _f6(X):
    with np.errstate(divide="ignore"):
        v = 4.0 * (np.log(np.abs(X[:, 1])) + np.sqrt(np.abs(X[:, 0])) - 1.0)
    return np.maximum(v, SCENARIO6_FLOOR)


def _m_lin2(X):
    return 1.0 + 2.0 * X[:, 0] + X[:, 1]


def _m_lin3(X):
    return 1.0 + 2.0 * X[:, 0] + X[:, 1] - X[:, 2]


def _m5(X):
    return 1.0 + 2.0 * X[:, 0]


def _m6(X):
    return 1.0 + 2.0 * X[:, 0] ** 2 + X[:, 1]


@dataclass(frozen=True)
class ScenarioSpec:
    """A data-generating process with its contrast and optimal-rule oracles.

    ``contrast_fn`` and ``m0_fn`` take an ``(n, p)`` array and return ``(n,)``.
    """

    id: int
    p: int
    covariate_law: str
    sampler: Callable[[int, np.random.Generator], np.ndarray] = field(repr=False)
    m0_fn: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    contrast_fn: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    noise_sd: float = 1.0
    intrinsic_dim: int | None = None

    def __post_init__(self):
        if not self.noise_sd > 0:
            raise ValueError("noise_sd must be positive")

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        X2 = np.atleast_2d(X)
        if X2.shape[1] != self.p:
            raise ValueError(f"scenario {self.id} expects dimension {self.p}, got {X2.shape[1]}")
        return X2, single

    def sample_covariates(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if n < 1:
            raise ValueError("n must be at least 1")
        return self.sampler(int(n), rng)

    def m0(self, X):
        X2, single = self._check(X)
        v = self.m0_fn(X2)
        return float(v[0]) if single else v

    def true_contrast(self, X):
        X2, single = self._check(X)
        v = self.contrast_fn(X2)
        return float(v[0]) if single else v

    def t0(self, X, a):
        """Treatment interaction term ``a * f(x) / 2``."""
        X2, single = self._check(X)
        v = 0.5 * np.asarray(a, dtype=np.float64) * self.contrast_fn(X2)
        return float(v.reshape(-1)[0]) if single else v

    def mean_outcome(self, X, a):
        X2, single = self._check(X)
        v = self.m0_fn(X2) + 0.5 * np.asarray(a, dtype=np.float64) * self.contrast_fn(X2)
        return float(v.reshape(-1)[0]) if single else v

    def sample_outcome(self, X, a, rng: np.random.Generator):
        X2, single = self._check(X)
        mu = self.m0_fn(X2) + 0.5 * np.asarray(a, dtype=np.float64) * self.contrast_fn(X2)
        r = mu + self.noise_sd * rng.standard_normal(mu.shape)
        return float(r.reshape(-1)[0]) if single else r

    def optimal_rule(self, X):
        X2, single = self._check(X)
        v = np.where(self.contrast_fn(X2) >= 0.0, 1, -1)
        return int(v[0]) if single else v

    def sample_dataset(self, n: int, rng: np.random.Generator) -> Dataset:
        """Plain randomised trial: covariates, fair-coin arms, outcomes."""
        X = self.sample_covariates(n, rng)
        A = np.where(rng.random(n) < 0.5, 1, -1)
        R = self.sample_outcome(X, A, rng)
        return Dataset(X, A, R)


_SCENARIOS = {
    1: dict(p=2, covariate_law="U[-1,1]^2", sampler=_uniform_cube(2), m0_fn=_m_lin2, contrast_fn=_f1, intrinsic_dim=2),
    2: dict(p=2, covariate_law="U[-1,1]^2", sampler=_uniform_cube(2), m0_fn=_m_lin2, contrast_fn=_f2, intrinsic_dim=2),
    3: dict(p=3, covariate_law="unit sphere S^2", sampler=_unit_sphere, m0_fn=_m_lin3, contrast_fn=_f3, intrinsic_dim=2),
    4: dict(p=8, covariate_law="U[-1,1]^8", sampler=_uniform_cube(8), m0_fn=_m_lin3, contrast_fn=_f4, intrinsic_dim=8),
    5: dict(p=2, covariate_law="N(0,1)^2", sampler=_normal(2), m0_fn=_m5, contrast_fn=_f5, intrinsic_dim=2),
    6: dict(p=2, covariate_law="N(0,1)^2", sampler=_normal(2), m0_fn=_m6, contrast_fn=_f6, intrinsic_dim=2),
}

SCENARIO_IDS = tuple(sorted(_SCENARIOS))


def get_scenario(scenario_id: int) -> ScenarioSpec:
    try:
        kw = _SCENARIOS[int(scenario_id)]
    except (KeyError, ValueError, TypeError):
        raise ValueError(f"unknown scenario id {scenario_id!r}; expected one of {SCENARIO_IDS}") from None
    return ScenarioSpec(id=int(scenario_id), **kw)


def sample_covariates(spec: ScenarioSpec, n: int, rng) -> np.ndarray:
    return spec.sample_covariates(n, rng)


def true_contrast(spec: ScenarioSpec, x):
    return spec.true_contrast(x)


def sample_outcome(spec: ScenarioSpec, x, a, rng):
    return spec.sample_outcome(x, a, rng)


def optimal_rule(spec: ScenarioSpec, x):
    return spec.optimal_rule(x)


# ------------------------------------------------------------------ pool CSV


def _parse_meta(line: str, lineno: int) -> dict:
    body = line.lstrip("#").strip()
    meta = {}
    for part in body.replace(";", ",").split(","):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise MalformedRow(lineno, f"bad metadata entry {part!r}")
        k, v = (s.strip() for s in part.split("=", 1))
        meta[k] = v
    return meta


def load_pool(path, covariates: list[str] | None = None, arm_col: str = "arm",
              outcome_col: str = "outcome") -> Dataset:
    """Read a pool CSV, keeping file order.

    Lines starting with ``#`` before the header may carry metadata as
    ``key=value`` pairs; ``outcome_direction`` and ``propensity`` are read.
    Covariate columns default to every column other than arm/outcome.
    """
    meta: dict = {}
    rows = []
    with open(path, newline="") as fh:
        lines = list(enumerate(fh, start=1))
    body = []
    header_line = None
    for lineno, line in lines:
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            if header_line is None:
                meta.update(_parse_meta(stripped, lineno))
            continue
        if header_line is None:
            header_line = (lineno, stripped)
        else:
            body.append((lineno, line))
    if header_line is None:
        raise EmptyPool(f"{path}: no header")
    header = next(csv.reader([header_line[1]]))
    header = [h.strip() for h in header]
    for col in (arm_col, outcome_col):
        if col not in header:
            raise MalformedRow(header_line[0], f"missing column {col!r}")
    if covariates is None:
        covariates = [h for h in header if h not in (arm_col, outcome_col)]
    if not covariates:
        raise MalformedRow(header_line[0], "no covariate columns")
    idx_x = [header.index(c) for c in covariates]
    idx_a = header.index(arm_col)
    idx_r = header.index(outcome_col)

    for lineno, line in body:
        fields = next(csv.reader([line]))
        if len(fields) != len(header):
            raise MalformedRow(lineno, f"expected {len(header)} fields, got {len(fields)}")
        raw_a = fields[idx_a].strip()
        try:
            a = float(raw_a)
        except ValueError:
            raise UnknownArmValue(lineno, raw_a) from None
        if a not in (-1.0, 1.0):
            raise UnknownArmValue(lineno, raw_a)
        try:
            x = [float(fields[i]) for i in idx_x]
            r = float(fields[idx_r])
        except ValueError as exc:
            raise MalformedRow(lineno, str(exc)) from None
        if not (np.all(np.isfinite(x)) and np.isfinite(r)):
            raise MalformedRow(lineno, "non-finite value")
        rows.append((x, int(a), r))
    if not rows:
        raise EmptyPool(f"{path}: header only")
    X = np.array([r[0] for r in rows], dtype=np.float64)
    A = np.array([r[1] for r in rows], dtype=np.int64)
    R = np.array([r[2] for r in rows], dtype=np.float64)
    return Dataset(
        X, A, R,
        propensity=float(meta.get("propensity", 0.5)),
        outcome_direction=meta.get("outcome_direction", MAXIMIZE),
    )


def write_pool(path, data: Dataset, names: list[str] | None = None) -> None:
    names = names or [f"x_{i + 1}" for i in range(data.p)]
    with open(path, "w", newline="") as fh:
        fh.write(f"# outcome_direction={data.outcome_direction}, propensity={data.propensity!r}\n")
        w = csv.writer(fh)
        w.writerow([*names, "arm", "outcome"])
        for x, a, r in data:
            w.writerow([*(repr(float(v)) for v in x), a, repr(r)])
