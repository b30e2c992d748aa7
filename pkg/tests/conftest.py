import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from nafvdetect.generator import gen_scenario, preset
from nafvdetect.pipeline import train_baseline

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def train_scenario():
    return gen_scenario(preset("train"), seed=1)


@pytest.fixture(scope="session")
def trained(train_scenario):
    """Filtered baseline trained on the reference normal stream."""
    return train_baseline(train_scenario.table, train_scenario.config.unit_time)


@pytest.fixture(scope="session")
def trained_unfiltered(train_scenario):
    return train_baseline(train_scenario.table, train_scenario.config.unit_time, filtered=False)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
