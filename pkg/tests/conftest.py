import contextlib
import functools
import time

import pytest

from aanexo.harness import AdaptationConfig, TrialConfig, compute_metrics, run_trial
from aanexo.plant import Condition, InvolvementCondition

SUBJECTS = ("S1", "S2", "S3")
CONDITIONS = ("R", "EA", "ER", "FA", "FR")
SEEDS = (0, 1, 2, 3, 4)

# resist pulse used by the adaptation tests
PULSE = InvolvementCondition(Condition.ER, window=(5.0, 8.0))
PULSE_THRESHOLD = 0.5
PULSE_DURATION = 12.0

TRIAL_SECONDS: dict[tuple, float] = {}
ACCEPTANCE: dict[int, tuple[str, bool, list[str]]] = {}
N_CRITERIA = 11


@functools.lru_cache(maxsize=None)
def _trial(subject, condition, seed):
    t0 = time.perf_counter()
    rec = run_trial(subject, condition, TrialConfig(), seed=seed)
    TRIAL_SECONDS[(subject, condition, seed)] = time.perf_counter() - t0
    return rec, compute_metrics(rec)


@functools.lru_cache(maxsize=None)
def _pulse(adapt: bool):
    cfg = TrialConfig(duration=PULSE_DURATION,
                      adaptation=AdaptationConfig(enabled=adapt, threshold=PULSE_THRESHOLD))
    return run_trial("S1", PULSE, cfg, seed=0)


@pytest.fixture(scope="session")
def default_trial():
    """``(record, metrics)`` of a default 24 s trial, computed once per session."""
    return _trial


@pytest.fixture(scope="session")
def pulse_trial():
    """S1 resist-pulse trial with (True) or without (False) adaptation."""
    return _pulse


class Criterion:
    def __init__(self):
        self.lines: list[str] = []
        self.failed: list[str] = []

    def check(self, label: str, ok: bool, detail: str = ""):
        ok = bool(ok)
        line = f"{'ok  ' if ok else 'FAIL'} {label}" + (f" ({detail})" if detail else "")
        self.lines.append(line)
        if not ok:
            self.failed.append(line)
        return ok


@pytest.fixture
def criterion():
    """Context manager that logs one acceptance criterion and asserts it."""

    @contextlib.contextmanager
    def run(number: int, title: str):
        crit = Criterion()
        try:
            yield crit
        except Exception as exc:
            crit.failed.append(f"raised {type(exc).__name__}: {exc}")
            ACCEPTANCE[number] = (title, False, crit.lines + crit.failed[-1:])
            raise
        ACCEPTANCE[number] = (title, not crit.failed, crit.lines)
        assert not crit.failed, "\n".join(crit.failed)

    return run


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        if n not in ACCEPTANCE:
            tr.write_line(f"criterion {n:2d}: NOT RUN")
            continue
        title, ok, lines = ACCEPTANCE[n]
        tr.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {title}")
        for line in lines:
            if line.startswith("FAIL") or line.startswith("raised"):
                tr.write_line(f"               {line}")
