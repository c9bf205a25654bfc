"""Shared fixtures: seeded generators, small grids and band-limited fields."""

import numpy as np
import pytest
from hypothesis import settings

from services.identities import random_band_limited, random_divergence_free
from services.params import ParameterConfig, StepScales, TableMode, build_table
from services.spectral import Grid, ScalarField, SymTensorField, VectorField

settings.register_profile("numerics", deadline=None, max_examples=50)
settings.load_profile("numerics")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def grid32():
    return Grid(32)


@pytest.fixture
def grid64():
    return Grid(64)


@pytest.fixture
def random_scalar(rng):
    def make(grid: Grid, band: int = 6, zero_mean: bool = True) -> ScalarField:
        return random_band_limited(grid, ScalarField, band, rng, zero_mean)
    return make


@pytest.fixture
def random_vector(rng):
    def make(grid: Grid, band: int = 6, zero_mean: bool = True) -> VectorField:
        return random_band_limited(grid, VectorField, band, rng, zero_mean)
    return make


@pytest.fixture
def random_solenoidal(rng):
    def make(grid: Grid, band: int = 6) -> VectorField:
        return random_divergence_free(grid, band, rng)
    return make


@pytest.fixture
def random_tensor(rng):
    def make(grid: Grid, band: int = 6, zero_mean: bool = True) -> SymTensorField:
        return random_band_limited(grid, SymTensorField, band, rng, zero_mean)
    return make


@pytest.fixture
def desk_table():
    return build_table(ParameterConfig(), qmax=3, mode=TableMode.DESK, override_lambda=(85, 170, 255))


def make_step(lam: int = 85, tau_m: float = 0.01, tau_c: float = 0.05, beta: float = 0.8) -> StepScales:
    """Hand-built scales for unit tests that do not need a table."""
    delta = float(lam) ** (-2 * beta)
    return StepScales(
        q=0,
        lam=lam,
        delta=delta,
        lam_low=lam,
        tau_m=tau_m,
        tau_c=tau_c,
        lam_next=2 * lam,
        delta_next=float(2 * lam) ** (-2 * beta),
    )
