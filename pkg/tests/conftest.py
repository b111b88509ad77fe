import pytest

from bosebound.configspace import TauTable
from bosebound.scales import ScaleSet
from bosebound.twobody import PotentialSpec


@pytest.fixture(scope="session")
def desk():
    """Desk-size scales: l_-1 = 4, l0 = 16, l1 = 128, eight particles per cell."""
    return ScaleSet.explicit(8 / 128**3, 4.0, 16.0, 128.0)


@pytest.fixture(scope="session")
def square():
    return PotentialSpec("square-barrier", 50.0, 1.0)


@pytest.fixture(scope="session")
def table(square, desk):
    return TauTable(square, desk)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import LINES
    except ImportError:
        return

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
