import numpy as np
import pytest

from ancientflow.discretization import build_grid
from ancientflow.geometry import Hypersurface
from ancientflow.norms import WeightParams
from ancientflow.spectral import negative_spectrum


@pytest.fixture(scope="session")
def catenoid():
    return Hypersurface("catenoid", 2, 12.0)


@pytest.fixture(scope="session")
def plane():
    return Hypersurface("plane", 2, 20.0)


@pytest.fixture(scope="session")
def cat_grid(catenoid):
    return build_grid(catenoid, 8.0, 401, 8)


@pytest.fixture(scope="session")
def cat_data(catenoid, cat_grid):
    return negative_spectrum(catenoid, cat_grid)


@pytest.fixture(scope="session")
def params():
    return WeightParams(beta=3.0, alpha=0.5, delta0=0.28)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
