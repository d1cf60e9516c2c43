import numpy as np
import pytest

from delaysync.models import get_model

LORENZ_THETA = np.array([10.0, 28.0, 8.0 / 3.0, 0.0])
ROSSLER_THETA = np.array([0.1, 0.1, 14.0, 0.0])
X0 = np.array([8.0, 9.0, 10.0])
Y0 = np.array([3.0, 4.0, 5.0])


@pytest.fixture(scope="session")
def lorenz3():
    return get_model("lorenz")


@pytest.fixture(scope="session")
def lorenz4():
    return get_model("lorenz-m4")


@pytest.fixture(scope="session")
def rossler3():
    return get_model("rossler")


@pytest.fixture(scope="session")
def rossler4():
    return get_model("rossler-m4")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
