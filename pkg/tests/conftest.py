import numpy as np
import pytest

from filling import build_filling
from metric_core import Region, build_square


@pytest.fixture(scope='session')
def square12():
    return build_square(12)


@pytest.fixture(scope='session')
def square20():
    return build_square(20)


@pytest.fixture(scope='session')
def filling12(square12):
    return build_filling(square12, 2.0, 3)


@pytest.fixture(scope='session')
def filling16():
    return build_filling(build_square(16), 2.0, 4)


@pytest.fixture
def strips():
    return Region.strip(0.0, 0.25), Region.strip(0.75, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(7)
