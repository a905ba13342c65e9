import pytest
from hypothesis import HealthCheck, settings

from epipolicy import GridSpec, france_preset

settings.register_profile("default", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def france():
    return france_preset()


@pytest.fixture(scope="session")
def france_tradeoff():
    return france_preset("france-tradeoff")


@pytest.fixture(scope="session")
def mini_grid():
    return GridSpec((1, 3, 8, 20), (30, 44), (1, 11, 40), (0.4, 0.6), (0.7, 0.9, 1.1), (0.4, 1.0, 1.4))


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
