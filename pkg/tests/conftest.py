import numpy as np
import pytest

from ctranatd.nn.tensor import Parameter, RngState


@pytest.fixture
def gen():
    return np.random.default_rng(1234)


@pytest.fixture
def rng():
    return RngState(7)


def param(name, value):
    return Parameter(name, np.asarray(value, dtype=np.float64))


# acceptance lines collected by tests/test_acceptance.py
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
