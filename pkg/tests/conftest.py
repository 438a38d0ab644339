import numpy as np
import pytest

from evosys.phase import FourierBasis2D, SineBasis


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def fbasis():
    return FourierBasis2D(2 * np.pi, 6)


@pytest.fixture
def sbasis():
    return SineBasis(1.0, 16)


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def record_criterion():
    def record(number: int, passed: bool, detail: str, seconds: float):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} ({detail}; {seconds:.1f} s)"
        ACCEPTANCE_LINES[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
