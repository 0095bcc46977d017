import os

# keep the stderr echo quiet unless a test run asks otherwise
os.environ.setdefault("AMD_LOG_LEVEL", "ERROR")

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from services.event_log import clear_app_logs

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile(
    "fast", max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.getenv("HYPOTHESIS_PROFILE", "default"))


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running acceptance runs")


@pytest.fixture(autouse=True)
def fresh_logs():
    clear_app_logs()
    yield


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
