import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# ------------------------------------------------------ acceptance summary

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)
