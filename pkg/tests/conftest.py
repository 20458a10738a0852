import numpy as np
import pytest

from plumeid.fem import ModelCoefficients
from plumeid.grid import build_grid
from plumeid.synth import NoiseSpec, default_geometry, generate_measurements


@pytest.fixture(scope="session")
def model():
    return ModelCoefficients(0.01, (1.0, 0.0))


@pytest.fixture(scope="session")
def grid_12x4():
    return build_grid(3.0, 1.0, 12, 4)


@pytest.fixture(scope="session")
def grid_30x10():
    return build_grid(3.0, 1.0, 30, 10)


@pytest.fixture(scope="session")
def grid_60x20():
    return build_grid(3.0, 1.0, 60, 20)


@pytest.fixture(scope="session")
def clean_measurements_30x10(grid_30x10, model):
    return generate_measurements(default_geometry(), grid_30x10, model, NoiseSpec(7, 0.0))


@pytest.fixture(scope="session")
def clean_measurements_60x20(grid_60x20, model):
    return generate_measurements(default_geometry(), grid_60x20, model, NoiseSpec(7, 0.0))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
