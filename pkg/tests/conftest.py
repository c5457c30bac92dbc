import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from holoidem.geometry import CircularArray

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def array800():
    """N = 800 at lambda = 1 cm (R = 2/pi m)."""
    return CircularArray(800, 0.01)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_CRITERIA] = []


@pytest.fixture
def criterion(request):
    """``record(number, passed, detail)``: print one result line and keep it for the summary."""
    def record(number, passed, detail):
        line = f"criterion {number!s:<3} {'PASS' if passed else 'FAIL'}  {detail}"
        request.config.stash[_CRITERIA].append(line)
        print(line)
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_CRITERIA, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
