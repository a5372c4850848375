import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rdeepc.ltisim import benchmark_system

settings.register_profile("default", deadline=None, max_examples=30,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def plant():
    return benchmark_system()
