"""Shared fixtures: small simulations that keep the default test run fast."""

import numpy as np
import pytest

import ui
from measure import FiniteMeasure, FourierField
from simulator import MeasurePath, SimParams, simulate_path


@pytest.fixture(autouse=True)
def quiet_console():
    ui.set_quiet(True)
    yield
    ui.set_quiet(False)


@pytest.fixture(scope="session")
def small_params() -> SimParams:
    return SimParams(n_particles=200, c=1.0, T=1.0, dt=1.0 / 64, seed=7)


@pytest.fixture(scope="session")
def small_path(small_params) -> MeasurePath:
    return simulate_path(small_params, 0)


@pytest.fixture(scope="session")
def small_paths(small_params):
    return [simulate_path(small_params, r) for r in range(4)]


@pytest.fixture(scope="session")
def frozen_params() -> SimParams:
    """No branching and no motion: every snapshot equals the initial measure."""
    return SimParams(n_particles=50, c=0.0, T=1.0, dt=1.0 / 16, seed=1, motion=False)


@pytest.fixture
def constant_mass_path() -> MeasurePath:
    """Uniform unit mass held fixed on a 1/512 grid, with c = 1."""
    params = SimParams(n_particles=64, c=1.0, T=1.0, dt=1.0 / 512)
    times = np.linspace(0.0, 1.0, 513)
    mu = FiniteMeasure.uniform(64)
    return MeasurePath(times, tuple(mu for _ in times), params)


@pytest.fixture
def cos1() -> FourierField:
    return FourierField.cosine(1)


@pytest.fixture
def one() -> FourierField:
    return FourierField.constant(1.0)


@pytest.fixture(scope="session")
def random_measure():
    def build(seed: int, n_atoms: int = 25, mass: float = 1.0) -> FiniteMeasure:
        rng = np.random.default_rng(seed)
        weights = rng.uniform(0.5, 1.5, n_atoms)
        return FiniteMeasure(rng.random(n_atoms), weights * mass / weights.sum())
    return build
