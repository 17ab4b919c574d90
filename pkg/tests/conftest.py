import numpy as np
import pytest

from tdconved import numcore as nc

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def rng():
    return nc.Rng(1234)


@pytest.fixture
def report():
    """Record one pass/fail line for the acceptance summary."""

    def _report(criterion: str, ok: bool, detail: str = ""):
        ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}")
        return ok

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def rand_params(rng, shapes, scale=0.5):
    return [rng.uniform(-scale, scale, s) for s in shapes]


@pytest.fixture
def np_rng():
    return np.random.default_rng(0)
