import numpy as np
import pytest

from ksverify import profiles
from ksverify.fields import Grid


@pytest.fixture
def line():
    return Grid(1, 256, 8.0)


@pytest.fixture
def plane():
    return Grid(2, 32, 4.0)


@pytest.fixture
def gauss(line):
    return profiles.gaussian(line, 0.0, 1.0, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = []


@pytest.fixture
def acceptance_lines(request):
    return request.config.stash[ACCEPTANCE_KEY]


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for text in lines:
            terminalreporter.write_line(text)
