import sys
from pathlib import Path

import numpy as np
import pytest

from confset.distgen import PathologySpec, sample_mixture_spec

# shared brute-force oracles live next to the tests
sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture(scope="session")
def mixture10():
    return sample_mixture_spec(10, 10, 0)


@pytest.fixture(scope="session")
def pathology():
    return PathologySpec(beta=2, k_classes=10)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
