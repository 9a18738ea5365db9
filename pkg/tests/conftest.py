import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from beamdiverge.geometry import ArrayConfig

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def cfg64():
    return ArrayConfig(64, 64, 28e9)


@pytest.fixture(scope="session")
def cfg32():
    return ArrayConfig(32, 32, 28e9)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
