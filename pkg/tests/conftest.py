"""Session fixtures: fitted pipelines are expensive, so each case is trained once."""

import pytest

from calm.bench import gen_case
from calm.model import train_calm


@pytest.fixture(scope="session")
def case1():
    return train_calm(gen_case(1, 1000, seed=0))


@pytest.fixture(scope="session")
def case2():
    return train_calm(gen_case(2, 1000, seed=0))


def pytest_terminal_summary(terminalreporter):
    """One line per acceptance criterion, whatever the capture mode."""
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "REPORT", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(lines):
        terminalreporter.write_line(lines[n])
