import pytest

from core.noise import build_sampler
from core.wave import compute_spectral_data, solve_deterministic_wave
from schemas.config import GridSpec, NagumoParams

# Reference cell: rho=1, a=0.25, L=20, n=512
REFERENCE_GRID = GridSpec(half_length=20.0, points=512)


@pytest.fixture(scope="session")
def params():
    return NagumoParams()


@pytest.fixture(scope="session")
def grid():
    return REFERENCE_GRID


@pytest.fixture(scope="session")
def wave(params, grid):
    return solve_deterministic_wave(params, grid)


@pytest.fixture(scope="session")
def spectral(wave, params):
    return compute_spectral_data(wave, params)


@pytest.fixture(scope="session")
def sampler(grid):
    return build_sampler(grid, pad_factor=2)

