import numpy as np
import pytest

from eoppg.env import LQBenchmark, sample_dataset

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def bench20():
    return LQBenchmark(horizon=20)


@pytest.fixture(scope="session")
def offpolicy_data(bench20):
    """Behavior-policy data shared by read-only tests."""
    return sample_dataset(bench20, bench20.behavior_policy(), 4000, 12345)


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
