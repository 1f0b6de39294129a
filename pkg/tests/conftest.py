import numpy as np
import pytest

from quasilocal.sphere import ScalarField, sphere_grid
from quasilocal.surfaces import induced_data_slice, schwarzschild_sphere


@pytest.fixture(scope="session")
def grid():
    return sphere_grid(24)


@pytest.fixture(scope="session")
def small_grid():
    return sphere_grid(12)


@pytest.fixture(scope="session")
def schwarzschild(grid):
    return induced_data_slice(schwarzschild_sphere(grid, 4.0, 1.0))


@pytest.fixture(scope="session")
def zero(grid):
    return ScalarField(grid, np.zeros(grid.npts))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
