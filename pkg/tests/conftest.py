import numpy as np
import pytest

from cvinenma.datagen import SimDesignPlan, generate_dataset, reference_truth
from cvinenma.model import ModelSpec


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_plan():
    return SimDesignPlan(reference_truth("normal"), ModelSpec(2, "clayton180", "normal"), 3, 3, 3, 3,
                         seed=11)


@pytest.fixture(scope="session")
def small_data(small_plan):
    return generate_dataset(small_plan)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion for the terminal summary."""
    def record(number, passed, detail):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
