from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "repo",
    deadline=None,
    derandomize=True,
    max_examples=25,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("repo")

ROOT = Path(__file__).resolve().parents[1]
MODELS = ROOT / "models"
SCENARIOS = ROOT / "scenarios"


@pytest.fixture(scope="session")
def printhead():
    from pwainv.scenarios import build_printhead

    return build_printhead()


@pytest.fixture(scope="session")
def printhead_decoupled(printhead):
    from pwainv.stable_inversion import decouple

    return decouple(printhead.inverse())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
