import numpy as np
import pytest

from dpsosp.testbed import make_preset, quadratic_problem


@pytest.fixture
def saddle2d():
    """Noiseless 2-d quadratic saddle f = (x^2 - y^2) / 2."""
    return quadratic_problem((1.0, -1.0), 0.0, 4, seed=0)


@pytest.fixture(scope="session")
def quartic10():
    return make_preset("quartic-10d")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list = []


def record(number: int, title: str, passed: bool, detail: str) -> None:
    """Log one acceptance outcome; the lines are replayed in the terminal summary."""
    line = f"{'PASS' if passed else 'FAIL'} [criterion {number}] {title}: {detail}"
    ACCEPTANCE_LINES.append((number, line))
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
