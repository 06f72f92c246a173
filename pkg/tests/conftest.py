import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

from mdnad.core_math import Rng  # noqa: E402
from mdnad.data import gen_synthetic_bimodal, inject_anomalies  # noqa: E402

settings.register_profile("default", max_examples=200, deadline=None)
settings.load_profile("default")

# the seeded synthetic benchmark shared by trainer and acceptance tests
BENCH_N = 4000
BENCH_DATA_SEED = 7
BENCH_NOISE = 0.1


@pytest.fixture(scope="session")
def bimodal():
    return gen_synthetic_bimodal(BENCH_N, Rng(BENCH_DATA_SEED), BENCH_NOISE)


@pytest.fixture(scope="session")
def bimodal_heldout():
    return gen_synthetic_bimodal(2000, Rng(BENCH_DATA_SEED + 1000), BENCH_NOISE)


@pytest.fixture(scope="session")
def contaminated(bimodal):
    return inject_anomalies(bimodal, 0.05, Rng(BENCH_DATA_SEED + 1), shift=10.0)


@pytest.fixture
def rng():
    return Rng(12345)


@pytest.fixture
def np_rng():
    return np.random.default_rng(0)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda l: int(l.split()[1])):
            terminalreporter.write_line(line)
