import math

import pytest

from critsob import RadialGrid

A_CRIT = -math.pi ** 2 / 4

_ACCEPTANCE = []


@pytest.fixture(scope="session")
def grid256():
    return RadialGrid(1.0, 256)


@pytest.fixture(scope="session")
def grid512():
    return RadialGrid(1.0, 512)


@pytest.fixture
def record():
    """Record one acceptance line: ``record(label, passed, detail)``."""
    def _rec(label, passed, detail=""):
        _ACCEPTANCE.append((label, bool(passed), detail))
        return passed
    return _rec


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label, ok, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {label}  {detail}")
