import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fracks.spectral import Grid

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def grid2():
    return Grid(2, 64, 8.0)


@pytest.fixture
def grid1():
    return Grid(1, 128, 8.0)


def gaussian_field(grid, width=0.7, center=None):
    c = center if center is not None else [0.0] * grid.d
    r2 = sum((x - c0) ** 2 for x, c0 in zip(grid.coords, c))
    return np.broadcast_to(np.exp(-r2 / (2 * width**2)), grid.shape).copy()
