import numpy as np
import pytest

from qcdtradeoff.channels import DiscreteSensingPair
from qcdtradeoff.prob_core import ChannelMatrix


def bsc(eps):
    return ChannelMatrix([[1 - eps, eps], [eps, 1 - eps]])


@pytest.fixture
def binary_pair():
    # symbol 0 is blind to the change, symbol 1 sees a Z-type law switch
    return DiscreteSensingPair([[1.0, 0.0], [0.1, 0.9]], [[1.0, 0.0], [0.5, 0.5]])


@pytest.fixture
def bsc03():
    return bsc(0.3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Records one PASS/FAIL line per acceptance criterion, printed in the run summary."""

    def record(number, name, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} [{number}] {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("[")[1].split("]")[0])):
            terminalreporter.write_line(line)
