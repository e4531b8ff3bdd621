"""Command-line front end.

    activetrial simulate   --config run.toml --seed 7 --jobs 4 --out results/
    activetrial replay     --config run.toml
    activetrial samplesize --config run.toml
    activetrial margin     --config run.toml
    activetrial ratecheck  --config run.toml

The config file holds one table per command plus optional top-level ``seed``,
``jobs`` and ``out``; flags override the file. Every output file starts with
``#`` lines echoing the resolved config and seed. Exit status: 0 when every
requested cell completed, 1 on config or IO errors, 2 when some cells failed.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import passive_ols
from .evaluation import (
    NoConcordantSubjects,
    NonPositiveAev,
    aev,
    margin_exponent,
    margin_fractions,
    rate_fit,
    weighted_mean_outcome,
)
from .gp import GpConfig
from .kernel import KernelConfig
from .numerics import make_rng
from .sample_size import (
    SampleSizeInputs,
    bootstrap_ctilde,
    calibrate_ctilde,
    _unit_bound,
    sample_size_table,
    theta_exponent,
)
from .scenarios import SCENARIO_IDS, PoolError, get_scenario, load_pool
from .trial import AL_BV, AL_GP, TrialConfig, replay_pool, run_active_trial

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

OLS = "OLS"
METHODS = (AL_GP, AL_BV, OLS)
U64 = 2**64


class ConfigError(ValueError):
    pass


# ------------------------------------------------------------------ schema

_KERNEL = {"L": (float, 1.0), "C1": (float, 1.0), "t": (float, 0.5)}
_GP = {"restarts": (int, 3), "multiplier": (float, 3.0), "max_evals": (int, 600),
       "warm_start": (bool, True)}

SCHEMA: dict[str, dict] = {
    "simulate": {
        "scenario": (int, 1),
        "budgets": (list, [150, 350, 850]),
        "N0": (int, None),
        "alpha": (float, 0.05),
        "replications": (int, 3),
        "methods": (list, list(METHODS)),
        "test_size": (int, 10_000),
        "kernel": (_KERNEL, None),
        "gp": (_GP, None),
    },
    "replay": {
        "pool": (str, None),
        "covariates": (list, None),
        "arm_col": (str, "arm"),
        "outcome_col": (str, "outcome"),
        "methods": (list, [AL_GP, AL_BV]),
        "N0": (int, 50),
        "budget": (int, 300),
        "alpha": (float, 0.05),
        "standardize": (bool, True),
        "kernel": (_KERNEL, None),
        "gp": (_GP, None),
    },
    "samplesize": {
        "d": (float, 3.0),
        "alpha": (float, 0.2),
        "gammas": (list, [0.5, 1.0, 1.5, 2.0, 2.5]),
        "epsilons": (list, [1.7, 1.6, 1.5]),
        "N0": (int, 50),
        "rho": (float, math.inf),
        "V0": (float, 1.0),
        "beta": (float, None),
        "C_tilde": (float, None),
        "calibrate": ({"N": (int, 165), "value": (float, 1.7), "gamma": (float, 0.5),
                       "pilot_N": (int, None)}, None),
        "bootstrap": ({"pool": (str, None), "B": (int, 50), "N0": (int, 50), "budget": (int, 100),
                       "estimator": (str, AL_GP), "covariates": (list, None),
                       "arm_col": (str, "arm"), "outcome_col": (str, "outcome")}, None),
    },
    "margin": {
        "scenario": (int, 1),
        "t_min": (float, 0.01),
        "t_max": (float, 0.5),
        "n_t": (int, 20),
        "n": (int, 1_000_000),
    },
    "ratecheck": {
        "input": (str, None),
        "d": (float, 2.0),
        "gamma": (float, 1.0),
        "slack": (float, 0.35),
    },
}
TOP_LEVEL = {"seed", "jobs", "out", *SCHEMA}


def _coerce(value, kind, where):
    if kind is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if kind is bool and not isinstance(value, bool):
        raise ConfigError(f"{where}: expected true/false, got {value!r}")
    if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise ConfigError(f"{where}: expected an integer, got {value!r}")
    if not isinstance(value, kind):
        raise ConfigError(f"{where}: expected {kind.__name__}, got {value!r}")
    return value


def _validate(raw: dict, schema: dict, where: str) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected a table")
    for key in raw:
        if key not in schema:
            raise ConfigError(f"{where}.{key}: unknown key")
    out = {}
    for key, (kind, default) in schema.items():
        path = f"{where}.{key}"
        if isinstance(kind, dict):
            # knob tables always resolve; optional tables stay None unless given
            if key in raw or key in ("kernel", "gp"):
                out[key] = _validate(raw.get(key, {}), kind, path)
            else:
                out[key] = None
        elif key in raw:
            out[key] = _coerce(raw[key], kind, path)
        else:
            out[key] = default
    return out


def load_config(path: str | None, command: str, overrides: dict) -> dict:
    raw: dict = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config {path}: {exc}") from None
    for key in raw:
        if key not in TOP_LEVEL:
            raise ConfigError(f"{key}: unknown key")
    cfg = _validate(raw.get(command, {}), SCHEMA[command], command)
    seed = raw.get("seed", 0)
    jobs = raw.get("jobs", 1)
    out = raw.get("out", ".")
    for k, v in overrides.items():
        if v is not None:
            if k == "seed":
                seed = v
            elif k == "jobs":
                jobs = v
            elif k == "out":
                out = v
    seed = _coerce(seed, int, "seed")
    if not 0 <= seed < U64:
        raise ConfigError("seed: must be an unsigned 64-bit integer")
    jobs = _coerce(jobs, int, "jobs")
    if jobs < 1:
        raise ConfigError("jobs: must be at least 1")
    cfg.update(seed=seed, jobs=jobs, out=str(out))
    return cfg


def _kernel_cfg(c) -> KernelConfig:
    try:
        return KernelConfig(**c)
    except ValueError as exc:
        raise ConfigError(f"kernel: {exc}") from None


def _gp_cfg(c, seed: int = 0) -> GpConfig:
    try:
        return GpConfig(**c, seed=seed % 2**31)
    except ValueError as exc:
        raise ConfigError(f"gp: {exc}") from None


def _check_scenario(cfg, section):
    if cfg["scenario"] not in SCENARIO_IDS:
        raise ConfigError(f"{section}.scenario: unknown scenario id {cfg['scenario']} "
                          f"(choose from {list(SCENARIO_IDS)})")


def _check_methods(methods, allowed, section):
    for m in methods:
        if m not in allowed:
            raise ConfigError(f"{section}.methods: unknown method {m!r} (choose from {list(allowed)})")


# ------------------------------------------------------------------ output


def header(command: str, cfg: dict) -> str:
    echo = {k: v for k, v in cfg.items() if k not in ("out", "jobs")}
    lines = [f"# activetrial {__version__} {command}",
             f"# seed: {cfg['seed']}",
             "# config: " + json.dumps(echo, sort_keys=True, default=str)]
    return "\n".join(lines) + "\n"


def write_csv(path: Path, head: str, columns: list[str], rows) -> None:
    buf = io.StringIO()
    buf.write(head)
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow(r)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue())


def _num(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return repr(float(v)) if isinstance(v, float) else str(v)


def job_seed(seed: int, *keys: int) -> int:
    """Deterministic 63-bit seed for one cell of the run grid."""
    ss = np.random.SeedSequence([seed, *keys])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


# ---------------------------------------------------------------- simulate

_TEST_KEY = 2**32 - 1


def _simulate_cell(args):
    method, scenario_id, budget, rep, seed, n0, alpha, kernel, gp, test_size = args
    spec = get_scenario(scenario_id)
    cell = job_seed(seed, rep, budget)
    test_x = spec.sample_covariates(test_size, make_rng(job_seed(seed, rep, _TEST_KEY)))
    if method == OLS:
        rule = passive_ols(spec, budget, make_rng(cell))
    else:
        cfg = TrialConfig(N=budget, N0=n0, alpha=alpha, estimator=method,
                          kernel=KernelConfig(**kernel), gp=GpConfig(**gp, seed=cell % 2**31), seed=cell)
        rule = run_active_trial(cfg, spec).rule
    return aev(rule, spec, test_x), cell


def _run_cells(cells, jobs):
    """Evaluate cells, returning ``(result | None, error | None)`` in input order."""

    def safe(fn):
        def call(a):
            try:
                return fn(a), None
            except Exception as exc:  # reported per cell
                return None, f"{type(exc).__name__}: {exc}"
        return call

    if jobs == 1:
        return [safe(_simulate_cell)(c) for c in cells]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        futs = [ex.submit(_simulate_cell, c) for c in cells]
        out = []
        for f in futs:
            try:
                out.append((f.result(), None))
            except Exception as exc:
                out.append((None, f"{type(exc).__name__}: {exc}"))
        return out


def cmd_simulate(cfg: dict) -> int:
    _check_scenario(cfg, "simulate")
    _check_methods(cfg["methods"], METHODS, "simulate")
    budgets = [int(b) for b in cfg["budgets"]]
    if not budgets or any(b < 2 for b in budgets):
        raise ConfigError("simulate.budgets: need at least one budget, each >= 2")
    if cfg["replications"] < 1:
        raise ConfigError("simulate.replications: must be at least 1")
    _kernel_cfg(cfg["kernel"])
    _gp_cfg(cfg["gp"])
    for b in budgets:
        try:
            TrialConfig(N=b, N0=cfg["N0"], alpha=cfg["alpha"])
        except ValueError as exc:
            raise ConfigError(f"simulate: budget {b}: {exc}") from None

    grid = [(m, b, r) for m in cfg["methods"] for b in budgets for r in range(cfg["replications"])]
    cells = [(m, cfg["scenario"], b, r, cfg["seed"], cfg["N0"], cfg["alpha"], cfg["kernel"],
              cfg["gp"], cfg["test_size"]) for m, b, r in grid]
    results = _run_cells(cells, cfg["jobs"])

    out = Path(cfg["out"])
    head = header("simulate", cfg)
    rows, failed = [], []
    per: dict = {}
    for (m, b, r), (res, err) in zip(grid, results):
        if err is not None:
            failed.append((m, b, r, err))
            continue
        value, cell = res
        rows.append([m, b, r, repr(value), cell])
        per.setdefault((m, b), []).append(value)
    write_csv(out / "simulate_results.csv", head, ["method", "budget", "replication", "aev", "seed"], rows)
    plot = []
    for m in cfg["methods"]:
        for b in budgets:
            vals = per.get((m, b))
            if not vals:
                continue
            mean = math.fsum(vals) / len(vals)
            plot.append([m, repr(math.log(b)), repr(math.log(mean)) if mean > 0 else ""])
    write_csv(out / "simulate_plot.csv", head, ["method", "log_budget", "log_mean_aev"], plot)
    return _report(failed)


def _report(failed) -> int:
    if not failed:
        return 0
    print(f"{len(failed)} cell(s) failed:", file=sys.stderr)
    for f in failed:
        print("  " + " ".join(str(v) for v in f), file=sys.stderr)
    return 2


# ------------------------------------------------------------------ replay


def _load_pool(c):
    if not c.get("pool"):
        raise ConfigError("pool: path is required")
    return load_pool(c["pool"], c["covariates"], c["arm_col"], c["outcome_col"])


def cmd_replay(cfg: dict) -> int:
    _check_methods(cfg["methods"], (AL_GP, AL_BV), "replay")
    if cfg["budget"] < 0 or cfg["N0"] < 1:
        raise ConfigError("replay: need N0 >= 1 and budget >= 0")
    pool = _load_pool(cfg)
    out = Path(cfg["out"])
    head = header("replay", cfg)
    rows, failed = [], []
    for i, method in enumerate(cfg["methods"]):
        seed = job_seed(cfg["seed"], i)
        tc = TrialConfig(N=cfg["N0"] + cfg["budget"], N0=cfg["N0"], alpha=cfg["alpha"], estimator=method,
                         kernel=_kernel_cfg(cfg["kernel"]), gp=_gp_cfg(cfg["gp"], seed),
                         standardize=cfg["standardize"], seed=seed)
        try:
            res = replay_pool(tc, pool)
        except Exception as exc:
            failed.append((method, f"{type(exc).__name__}: {exc}"))
            continue
        audit = res.audit_csv()
        out.mkdir(parents=True, exist_ok=True)
        (out / f"replay_audit_{method}.csv").write_text(head + audit)
        try:
            value = weighted_mean_outcome(pool, res.rule)
        except NoConcordantSubjects as exc:
            failed.append((method, str(exc)))
            value = math.nan
        rows.append([method, seed, res.total_screened, res.total_enrolled, res.total_rejected,
                     res.stop_reason, _num(value)])
    write_csv(out / "replay_summary.csv", head,
              ["method", "seed", "screened", "enrolled", "rejected", "stop_reason",
               "weighted_mean_outcome"], rows)
    return _report(failed)


# -------------------------------------------------------------- samplesize


def cmd_samplesize(cfg: dict) -> int:
    gammas = [float(g) for g in cfg["gammas"]]
    eps = [float(e) for e in cfg["epsilons"]]
    if not gammas or not eps:
        raise ConfigError("samplesize: gammas and epsilons must be nonempty")
    d, alpha = cfg["d"], cfg["alpha"]
    for g in gammas:
        try:
            theta_exponent(d, g)
        except ValueError as exc:
            raise ConfigError(f"samplesize.gammas: {exc}") from None
    per_gamma = None
    mode = "fixed"
    if cfg["bootstrap"] is not None:
        b = cfg["bootstrap"]
        pool = _load_pool(b)
        tc = TrialConfig(N=b["N0"] + b["budget"], N0=b["N0"], alpha=alpha, estimator=b["estimator"],
                         seed=cfg["seed"])
        res = bootstrap_ctilde(pool, tc, b["B"], make_rng(cfg["seed"]), d=d, gamma=gammas[0],
                               details=True)
        per_gamma, mode = res.c_tilde_for, "bootstrap"
        c0 = res.c_tilde
        if res.dropped:
            print(f"{len(res.dropped)} bootstrap resample(s) dropped", file=sys.stderr)
    elif cfg["calibrate"] is not None:
        c = cfg["calibrate"]
        c0 = calibrate_ctilde(c["N"], c["value"], d, c["gamma"], alpha)
        if c["pilot_N"] is not None:
            diff = c0 * _unit_bound(c["pilot_N"], d, c["gamma"], alpha)
            per_gamma = lambda g: diff / _unit_bound(c["pilot_N"], d, g, alpha)  # noqa: E731
            mode = "calibrated-per-gamma"
        else:
            mode = "calibrated"
    elif cfg["C_tilde"] is not None:
        c0 = cfg["C_tilde"]
    else:
        raise ConfigError("samplesize: give C_tilde, a [samplesize.calibrate] or a [samplesize.bootstrap] table")
    try:
        base = SampleSizeInputs(d=d, gamma=gammas[0], alpha=alpha, C_tilde=c0, epsilon=eps[0],
                                rho=cfg["rho"], V0=cfg["V0"], N0=cfg["N0"], beta=cfg["beta"])
        table = sample_size_table(base, gammas, eps, per_gamma, mode)
    except ValueError as exc:
        raise ConfigError(f"samplesize: {exc}") from None
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    head = header("samplesize", cfg)
    (out / "samplesize.csv").write_text(table.to_csv(head))
    side = table.sidecar()
    rows = [[k, json.dumps(v, sort_keys=True) if isinstance(v, dict) else v] for k, v in side.items()]
    write_csv(out / "samplesize_sidecar.csv", head, ["key", "value"], rows)
    missing = [(g, e, "TargetUnreachable") for (g, e), v in table.cells.items() if v is None]
    return _report(missing)


# ------------------------------------------------------------------ margin


def cmd_margin(cfg: dict) -> int:
    _check_scenario(cfg, "margin")
    if not 0 < cfg["t_min"] < cfg["t_max"] or cfg["n_t"] < 5:
        raise ConfigError("margin: need 0 < t_min < t_max and n_t >= 5")
    spec = get_scenario(cfg["scenario"])
    grid = np.geomspace(cfg["t_min"], cfg["t_max"], cfg["n_t"])
    gamma = margin_exponent(spec, grid, cfg["n"], make_rng(cfg["seed"]))
    frac = margin_fractions(spec, grid, cfg["n"], make_rng(cfg["seed"]))
    out = Path(cfg["out"])
    head = header("margin", cfg) + f"# gamma_hat: {gamma!r}\n"
    write_csv(out / "margin.csv", head, ["t", "fraction"], [[repr(float(t)), repr(float(f))]
                                                          for t, f in zip(grid, frac)])
    print(f"gamma_hat = {gamma:.4f}")
    return 0


# --------------------------------------------------------------- ratecheck


def _read_rate_input(path: str) -> dict[str, list[tuple[float, float]]]:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    except OSError as exc:
        raise ConfigError(f"ratecheck.input: cannot read {path}: {exc.strerror}") from None
    if not rows or "budget" not in rows[0] or "aev" not in rows[0]:
        raise ConfigError("ratecheck.input: need 'budget' and 'aev' columns")
    groups: dict = {}
    for r in rows:
        groups.setdefault(r.get("method") or "all", {}).setdefault(float(r["budget"]), []).append(float(r["aev"]))
    return {m: [(b, math.fsum(v) / len(v)) for b, v in sorted(g.items())] for m, g in groups.items()}


def cmd_ratecheck(cfg: dict) -> int:
    if not cfg["input"]:
        raise ConfigError("ratecheck.input: path is required")
    groups = _read_rate_input(cfg["input"])
    rows, failed = [], []
    for method, pts in groups.items():
        try:
            fit = rate_fit(pts, d=cfg["d"], gamma=cfg["gamma"])
        except NonPositiveAev as exc:
            failed.append((method, str(exc)))
            continue
        lo, hi = fit.slope_ci()
        rows.append([method, repr(fit.slope), repr(lo), repr(hi), repr(fit.intercept),
                     repr(fit.theoretical_slope), repr(fit.theta), fit.within_bound(cfg["slack"]),
                     len(fit.excluded)])
        print(f"{method}: slope {fit.slope:.4f} (theory {fit.theoretical_slope:.4f})")
    write_csv(Path(cfg["out"]) / "ratecheck.csv", header("ratecheck", cfg),
              ["method", "slope", "slope_lo", "slope_hi", "intercept", "theoretical_slope", "theta",
               "within_bound", "excluded"], rows)
    return _report(failed)


COMMANDS = {
    "simulate": cmd_simulate,
    "replay": cmd_replay,
    "samplesize": cmd_samplesize,
    "margin": cmd_margin,
    "ratecheck": cmd_ratecheck,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="activetrial", description="Active clinical trial simulations and planning")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="TOML config file")
        p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
        p.add_argument("--jobs", type=int, help="worker processes")
        p.add_argument("--out", help="output directory")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.command,
                          {"seed": args.seed, "jobs": args.jobs, "out": args.out})
        return COMMANDS[args.command](cfg)
    except (ConfigError, PoolError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
