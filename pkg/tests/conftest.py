"""Shared fixtures: small grids and scenarios, an isolated registry."""

import numpy as np
import pytest

from btnsim.config import settings
from btnsim.grid import Grid, VectorField2
from btnsim.scenario import InitialSpec, SimulationConfig


@pytest.fixture
def grid9():
    return Grid(9, 9)


@pytest.fixture
def grid17():
    return Grid(17, 17)


@pytest.fixture
def sines():
    def fn(X, Y):
        return np.sin(np.pi * X) * np.sin(np.pi * Y)
    return fn


@pytest.fixture
def random_m():
    def build(grid, amplitude=1.0, seed=0):
        return InitialSpec(kind='random', amplitude=amplitude, seed=seed).build(grid)
    return build


@pytest.fixture
def small_cfg(grid17):
    return SimulationConfig(grid=grid17, kappa=5.0, dt=1e-3, t_end=0.02, record_every=2)


@pytest.fixture
def zero_m(grid17):
    return VectorField2.zeros(grid17)


@pytest.fixture
def isolated_settings(monkeypatch, tmp_path):
    """Registry and cache in a temp directory."""
    monkeypatch.setattr(settings, 'DATABASE_URL', f"sqlite:///{tmp_path / 'registry.db'}")
    monkeypatch.setattr(settings, 'OUTPUT_DIR', str(tmp_path / 'runs'))
    return settings
