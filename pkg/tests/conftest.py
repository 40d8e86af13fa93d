import numpy as np
import pytest

from hbmem.losses import quartic_loss

# Acceptance verdicts collected by test_acceptance.py: (criterion, passed, measured).
ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, measured in sorted(ACCEPTANCE_RESULTS, key=lambda r: int(r[0].split()[0])):
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} {name}: {measured}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def quartic3():
    """Three-dimensional quartic with coupling, used by coefficient tests."""
    A = np.array([[1.0, 0.2, 0.0], [0.2, 0.8, 0.1], [0.0, 0.1, 0.6]])
    return quartic_loss([0.3, 0.2, 0.1], A=A, b=[0.1, -0.2, 0.05])
