import numpy as np
import pytest

from mdplab import processes as P
from mdplab._parallel import set_threads


@pytest.fixture(autouse=True)
def _single_thread():
    set_threads(1)
    yield
    set_threads(1)


@pytest.fixture
def chain():
    return P.two_state_chain(0.3, 0.4, (1.0, -1.0))


@pytest.fixture
def uniform_iid():
    return P.IIDBounded(P.BoxInnovation("uniform", -1.0, 1.0, 1))


@pytest.fixture
def rademacher():
    return P.IIDBounded(P.BoxInnovation("rademacher", -1.0, 1.0, 1))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
