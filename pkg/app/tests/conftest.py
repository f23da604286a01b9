"""Shared fixtures for the PucciLab test suite."""
import numpy as np
import pytest

from app.core.parallel import get_workers, set_workers
from app.services.geometry import DataCloud, Density, Domain, sample_cloud
from app.services.graph_operators import OperatorParams


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run full-scale acceptance tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def unit_interval():
    return Domain.interval(0.0, 1.0)


@pytest.fixture
def unit_square():
    return Domain.box([0.0, 0.0], [1.0, 1.0])


@pytest.fixture
def five_point_cloud(unit_interval):
    """The cloud {0.3, 0.4, 0.5, 0.6, 0.7} on (0, 1)."""
    return DataCloud.from_points([0.3, 0.4, 0.5, 0.6, 0.7], unit_interval)


@pytest.fixture
def oracle_params():
    """eps = 0.15, Lambda = 1, tau = 7 (tau eps^2 = 0.1575), alpha = beta = 1/2."""
    return OperatorParams(alpha=0.5, beta=0.5, lam=1.0, tau=7.0, epsilon=0.15)


@pytest.fixture
def squared(five_point_cloud):
    return five_point_cloud.points[:, 0] ** 2


@pytest.fixture
def interval_cloud(unit_interval):
    return sample_cloud(unit_interval, Density.uniform(unit_interval), 200, seed=11)


@pytest.fixture
def square_cloud(unit_square):
    return sample_cloud(unit_square, Density.uniform(unit_square), 1500, seed=5)


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


@pytest.fixture
def restore_workers():
    before = get_workers()
    yield
    set_workers(before)
