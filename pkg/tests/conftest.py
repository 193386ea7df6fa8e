import numpy as np
import pytest

from gnetrack.game import default_quadratic_game, drifting_quadratic_game
from gnetrack.ridehailing import build_game, default_week_scenario


@pytest.fixture(scope="session")
def quad2():
    return default_quadratic_game()


@pytest.fixture(scope="session")
def drifting():
    return drifting_quadratic_game()


@pytest.fixture(scope="session")
def market():
    return default_week_scenario()


@pytest.fixture(scope="session")
def ridehailing(market):
    return build_game(market)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[k])
