import numpy as np
import pytest

from activetrial.trial import ENROLL, INITIAL, REJECT, TrialResult


def check_accounting(res: TrialResult) -> None:
    """Budget, stage-doubling and audit invariants every engine run must satisfy."""
    cfg = res.config
    a = res.audit
    n_enroll = sum(d in (ENROLL, INITIAL) for d in a.decision)
    n_reject = sum(d == REJECT for d in a.decision)
    assert res.total_enrolled == n_enroll <= cfg.N
    assert res.total_screened == n_enroll + n_reject
    assert res.total_rejected == n_reject
    assert sum(s.enrolled for s in res.stages) == res.total_enrolled
    assert sum(s.screened for s in res.stages) == res.total_screened
    assert all(s.screened == s.enrolled + s.rejected for s in res.stages)
    for prev, cur in zip(res.stages, res.stages[1:]):
        assert cur.N_k == 2 * prev.N_k
        assert cur.lb_after == prev.lb_after - cur.enrolled
    assert all(s.lb_after >= 0 for s in res.stages)
    assert res.stages[-1].lb_after == cfg.N - res.total_enrolled
    f = np.asarray(a.f_hat)
    d = np.asarray(a.delta)
    inside = (f - d <= 0) & (0 <= f + d)
    dec = np.asarray(a.decision)
    screened = dec != INITIAL
    assert np.array_equal(inside[screened], dec[screened] == ENROLL)


@pytest.fixture
def accounting():
    return check_accounting


# one PASS/FAIL line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def report_criterion(number: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
