import csv
import json
import math
from pathlib import Path

import numpy as np
import pytest

from activetrial import cli
from activetrial.numerics import make_rng
from activetrial.scenarios import get_scenario, write_pool


def run(tmp_path: Path, text: str, command: str, *extra) -> int:
    cfg = tmp_path / "run.toml"
    cfg.write_text(text)
    return cli.main([command, "--config", str(cfg), "--out", str(tmp_path / "out"), *extra])


def read_rows(path: Path):
    lines = [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def assert_header(path: Path, command: str, seed: int):
    lines = path.read_text().splitlines()
    assert lines[0].startswith(f"# activetrial ") and lines[0].endswith(command)
    assert lines[1] == f"# seed: {seed}"
    assert lines[2].startswith("# config: ")
    json.loads(lines[2][len("# config: "):])


SIM = """
seed = 11
[simulate]
scenario = 1
budgets = [100, 150]
replications = 3
N0 = 20
methods = ["AL-GP", "AL-BV", "OLS"]
test_size = 2000
"""


def test_simulate_rows_and_determinism(tmp_path):
    assert run(tmp_path, SIM, "simulate") == 0
    out = tmp_path / "out"
    rows = read_rows(out / "simulate_results.csv")
    assert len(rows) == 18
    assert {r["method"] for r in rows} == {"AL-GP", "AL-BV", "OLS"}
    assert all(float(r["aev"]) >= 0 for r in rows)
    plot = read_rows(out / "simulate_plot.csv")
    assert list(plot[0]) == ["method", "log_budget", "log_mean_aev"] and len(plot) == 6
    for name in ("simulate_results.csv", "simulate_plot.csv"):
        assert_header(out / name, "simulate", 11)
    first = {p.name: p.read_bytes() for p in out.iterdir()}
    assert run(tmp_path, SIM, "simulate") == 0
    assert {p.name: p.read_bytes() for p in out.iterdir()} == first


def test_simulate_jobs_do_not_change_results(tmp_path):
    text = SIM.replace('["AL-GP", "AL-BV", "OLS"]', '["AL-BV", "OLS"]')
    assert run(tmp_path, text, "simulate", "--jobs", "1") == 0
    one = (tmp_path / "out" / "simulate_results.csv").read_bytes()
    assert run(tmp_path, text, "simulate", "--jobs", "2") == 0
    assert (tmp_path / "out" / "simulate_results.csv").read_bytes() == one


def test_seed_flag_overrides_file(tmp_path):
    text = SIM.replace('["AL-GP", "AL-BV", "OLS"]', '["OLS"]')
    assert run(tmp_path, text, "simulate", "--seed", "99") == 0
    assert_header(tmp_path / "out" / "simulate_results.csv", "simulate", 99)


def test_invalid_scenario(tmp_path, capsys):
    assert run(tmp_path, "[simulate]\nscenario = 9\n", "simulate") == 1
    assert "simulate.scenario" in capsys.readouterr().err


def test_unknown_keys(tmp_path, capsys):
    assert run(tmp_path, "[simulate]\nbudget = [100]\n", "simulate") == 1
    assert "simulate.budget" in capsys.readouterr().err
    assert run(tmp_path, "[simulate.kernel]\nLL = 2.0\n", "simulate") == 1
    assert "simulate.kernel.LL" in capsys.readouterr().err
    assert run(tmp_path, "verbose = true\n", "simulate") == 1


def test_bad_types_and_seed(tmp_path, capsys):
    assert run(tmp_path, "[simulate]\nreplications = 2.5\n", "simulate") == 1
    assert "simulate.replications" in capsys.readouterr().err
    assert run(tmp_path, "seed = -1\n", "margin") == 1
    assert run(tmp_path, "[simulate]\n", "simulate", "--jobs", "0") == 1
    assert run(tmp_path, "[simulate\n", "simulate") == 1


def test_missing_config_file(tmp_path):
    assert cli.main(["margin", "--config", str(tmp_path / "nope.toml")]) == 1


def test_job_seed_is_stable_and_distinct():
    assert cli.job_seed(5, 1, 2) == cli.job_seed(5, 1, 2)
    seeds = {cli.job_seed(5, r, b) for r in range(10) for b in (100, 200)}
    assert len(seeds) == 20
    assert all(0 <= s < 2**63 for s in seeds)


def test_failed_cells_exit_two(tmp_path, monkeypatch, capsys):
    real = cli._simulate_cell

    def flaky(args):
        if args[3] == 1:
            raise np.linalg.LinAlgError("synthetic")
        return real(args)

    monkeypatch.setattr(cli, "_simulate_cell", flaky)
    text = SIM.replace('["AL-GP", "AL-BV", "OLS"]', '["OLS"]')
    assert run(tmp_path, text, "simulate") == 2
    assert "2 cell(s) failed" in capsys.readouterr().err
    assert len(read_rows(tmp_path / "out" / "simulate_results.csv")) == 4


# ------------------------------------------------------------------ replay


def _pool_file(tmp_path, n, seed=0):
    path = tmp_path / f"pool{n}.csv"
    write_pool(path, get_scenario(1).sample_dataset(n, make_rng(seed)))
    return path


def _replay_cfg(pool, n0, budget, methods='["AL-BV"]'):
    return f'[replay]\npool = "{pool}"\nN0 = {n0}\nbudget = {budget}\nmethods = {methods}\n'


def test_replay_tiny_pool(tmp_path):
    pool = _pool_file(tmp_path, 3)
    assert run(tmp_path, _replay_cfg(pool, 2, 10), "replay") in (0, 2)
    out = tmp_path / "out"
    summary = read_rows(out / "replay_summary.csv")
    assert len(summary) == 1
    s = summary[0]
    assert int(s["screened"]) == int(s["enrolled"]) + int(s["rejected"]) <= 3
    assert_header(out / "replay_audit_AL-BV.csv", "replay", 0)


def test_replay_budget_zero(tmp_path):
    pool = _pool_file(tmp_path, 30)
    assert run(tmp_path, _replay_cfg(pool, 10, 0), "replay") == 0
    s = read_rows(tmp_path / "out" / "replay_summary.csv")[0]
    assert int(s["enrolled"]) == 10 and int(s["screened"]) == 10


def test_replay_441_pool(tmp_path):
    pool = _pool_file(tmp_path, 441, seed=4)
    assert run(tmp_path, _replay_cfg(pool, 50, 300, '["AL-GP", "AL-BV"]'), "replay") == 0
    out = tmp_path / "out"
    summary = read_rows(out / "replay_summary.csv")
    assert [r["method"] for r in summary] == ["AL-GP", "AL-BV"]
    for r in summary:
        assert int(r["enrolled"]) <= 350
        assert int(r["screened"]) == int(r["enrolled"]) + int(r["rejected"]) <= 441
        assert math.isfinite(float(r["weighted_mean_outcome"]))
        audit = read_rows(out / f"replay_audit_{r['method']}.csv")
        assert len(audit) == int(r["screened"])


def test_replay_malformed_pool(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("x_1,arm,outcome\n0.1,2,1.0\n")
    assert run(tmp_path, _replay_cfg(bad, 2, 5), "replay") == 1
    assert "arm" in capsys.readouterr().err
    assert run(tmp_path, _replay_cfg(tmp_path / "missing.csv", 2, 5), "replay") == 1


# -------------------------------------------------------------- samplesize


def test_samplesize_grid(tmp_path):
    text = "[samplesize]\nN0 = 1\n[samplesize.calibrate]\nN = 165\nvalue = 1.7\ngamma = 0.5\n"
    assert run(tmp_path, text, "samplesize") == 0
    out = tmp_path / "out"
    body = [ln for ln in (out / "samplesize.csv").read_text().splitlines() if not ln.startswith("#")]
    cells = [c for ln in body[1:] for c in ln.split(",")[1:]]
    assert len(body) == 4 and len(cells) == 15
    assert all(c.isdigit() for c in cells)
    assert body[1].split(",")[1] == "165"
    side = {r["key"]: r["value"] for r in read_rows(out / "samplesize_sidecar.csv")}
    assert side["calibration"] == "calibrated"
    assert_header(out / "samplesize.csv", "samplesize", 0)


def test_samplesize_pilot_mode(tmp_path):
    text = "[samplesize]\nN0 = 1\n[samplesize.calibrate]\npilot_N = 150\n"
    assert run(tmp_path, text, "samplesize") == 0
    side = {r["key"]: r["value"] for r in read_rows(tmp_path / "out" / "samplesize_sidecar.csv")}
    assert side["calibration"] == "calibrated-per-gamma"
    assert len(json.loads(side["C_tilde"])) == 5


def test_samplesize_errors(tmp_path):
    assert run(tmp_path, "[samplesize]\n", "samplesize") == 1
    assert run(tmp_path, "[samplesize]\nd = 2.0\nC_tilde = 1.0\n", "samplesize") == 1


def test_samplesize_unreachable_exit_two(tmp_path):
    text = "[samplesize]\ngammas = [0.0]\nepsilons = [1e-12]\nC_tilde = 1e12\n"
    assert run(tmp_path, text, "samplesize") == 2


def test_samplesize_bootstrap(tmp_path):
    pool = _pool_file(tmp_path, 200, seed=3)
    text = (f"[samplesize]\nd = 2.0\ngammas = [0.5, 1.0]\n"
            f'[samplesize.bootstrap]\npool = "{pool}"\nB = 5\nN0 = 20\nbudget = 40\nestimator = "AL-BV"\n')
    assert run(tmp_path, text, "samplesize") == 0
    side = {r["key"]: r["value"] for r in read_rows(tmp_path / "out" / "samplesize_sidecar.csv")}
    assert side["calibration"] == "bootstrap"


# ------------------------------------------------------- margin, ratecheck


def test_margin_scenario_one(tmp_path):
    assert run(tmp_path, "[margin]\nscenario = 1\nn = 200000\n", "margin") == 0
    path = tmp_path / "out" / "margin.csv"
    line = next(ln for ln in path.read_text().splitlines() if ln.startswith("# gamma_hat"))
    assert 0.85 <= float(line.split(":")[1]) <= 1.15
    assert len(read_rows(path)) == 20
    assert_header(path, "margin", 0)


def test_ratecheck_power_law(tmp_path):
    data = tmp_path / "aev.csv"
    data.write_text("budget,aev\n" + "".join(f"{n},{3.0 / n!r}\n" for n in (100, 200, 400, 800)))
    assert run(tmp_path, f'[ratecheck]\ninput = "{data}"\n', "ratecheck") == 0
    rows = read_rows(tmp_path / "out" / "ratecheck.csv")
    assert float(rows[0]["slope"]) == pytest.approx(-1.0, abs=1e-12)
    assert rows[0]["within_bound"] == "True"
    assert_header(tmp_path / "out" / "ratecheck.csv", "ratecheck", 0)


def test_ratecheck_reads_simulate_output(tmp_path):
    data = tmp_path / "res.csv"
    lines = ["# activetrial", "method,budget,replication,aev,seed"]
    for m, k in (("A", 1.0), ("B", 2.0)):
        for n in (100, 200, 400, 800):
            lines += [f"{m},{n},0,{k * n ** -0.5!r},1", f"{m},{n},1,{k * n ** -0.5!r},2"]
    data.write_text("\n".join(lines) + "\n")
    assert run(tmp_path, f'[ratecheck]\ninput = "{data}"\n', "ratecheck") == 0
    rows = read_rows(tmp_path / "out" / "ratecheck.csv")
    assert [r["method"] for r in rows] == ["A", "B"]
    assert all(float(r["slope"]) == pytest.approx(-0.5) for r in rows)


def test_ratecheck_nonpositive_exit_two(tmp_path):
    data = tmp_path / "aev.csv"
    data.write_text("budget,aev\n100,0.1\n200,0\n400,0.02\n800,0.01\n")
    assert run(tmp_path, f'[ratecheck]\ninput = "{data}"\n', "ratecheck") == 2


def test_console_entry_point(tmp_path):
    import subprocess
    import sys
    r = subprocess.run([sys.executable, "-m", "activetrial.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and "activetrial" in r.stdout
