"""Shared fixtures for the rbrelax test suite."""

import numpy as np
import pytest

from src.physics.atomic_structure import build_level_scheme
from src.physics.liouville import RelaxationConfig, pressure_broadening
from src.types import DecayTrace
from src.utils.logger import setup_logger


@pytest.fixture(scope="session")
def scheme():
    """The shipped 16-level scheme (sympy coefficients are slow to build)."""
    return build_level_scheme()


@pytest.fixture(scope="session")
def relax():
    """Uniform relaxation at 50 s^-1 with 30 Torr of neon broadening."""
    return RelaxationConfig(gamma0=50.0, gamma_p=pressure_broadening(30.0))


@pytest.fixture(autouse=True)
def quiet_logger():
    """Keep rich output out of the test log."""
    return setup_logger(quiet=True)


@pytest.fixture
def config_dir(tmp_path, monkeypatch):
    """Empty user config directory."""
    directory = tmp_path / "configs"
    directory.mkdir()
    monkeypatch.setenv("RBRELAX_CONFIG_DIR", str(directory))
    return directory


def make_trace(times, values, **metadata) -> DecayTrace:
    values = np.asarray(values, dtype=float)
    return DecayTrace(np.asarray(times, dtype=float), values.copy(), values.copy(),
                      {k: str(v) for k, v in metadata.items()})


@pytest.fixture
def trace_factory():
    return make_trace


@pytest.fixture
def exponential_trace():
    """0.8 exp(-250 t) + 0.1 on 200 samples over 20 ms, no noise."""
    t = np.linspace(0.0, 0.02, 200)
    return make_trace(t, 0.8 * np.exp(-250.0 * t) + 0.1, protocol="A")
