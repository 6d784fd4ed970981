import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from contextformer.codec import Model
from contextformer.model import ModelConfig

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def toy_cfg():
    return ModelConfig()


@pytest.fixture(scope="session")
def toy_model(toy_cfg):
    return Model.from_seed(toy_cfg, 1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
