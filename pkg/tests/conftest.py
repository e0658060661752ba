import sys
from pathlib import Path

import hypothesis
import numpy as np
import pytest

# Add project root to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.config import Config  # noqa: E402

hypothesis.settings.register_profile("numerics", max_examples=40, deadline=None)
hypothesis.settings.register_profile("thorough", max_examples=400, deadline=None)
hypothesis.settings.load_profile("numerics")


@pytest.fixture
def rng():
    return np.random.default_rng(7)


@pytest.fixture
def sample_points(rng):
    """Chart points spread over a few radii, including the origin"""
    radii = np.array([0.0, 0.3, 1.0, 2.5, 6.0])
    angles = rng.uniform(0, 2 * np.pi, size=radii.shape)
    return radii * np.exp(1j * angles)


@pytest.fixture(autouse=True)
def restore_threads():
    original = Config.THREADS
    yield
    Config.THREADS = original
