import numpy as np
import pytest

ACCEPTANCE_LINES = []


def record_acceptance(criterion, passed, detail):
    """Queue one summary line; ``passed=None`` marks a skipped criterion."""
    status = "SKIP" if passed is None else "PASS" if passed else "FAIL"
    ACCEPTANCE_LINES.append(f"{status}  {criterion}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
