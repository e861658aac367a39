from __future__ import annotations

import numpy as np
import pytest

from mobecr.cli import EXAMPLE_GRID, example_data_path, ingest
from mobecr.model import InspectionGrid, Theta

# verdicts recorded by the acceptance module, printed after the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(criterion: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[criterion] = (bool(passed), detail)
    print(f"criterion {criterion}: {'PASS' if passed else 'FAIL'} {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} criterion {k}: {detail}")


@pytest.fixture
def theta1() -> Theta:
    return Theta(4.5, 2.5, 3.5)


@pytest.fixture
def sim_grid() -> InspectionGrid:
    return InspectionGrid((0.2, 0.3, 0.4))


@pytest.fixture
def example_grid() -> InspectionGrid:
    return InspectionGrid(EXAMPLE_GRID)


@pytest.fixture
def example_counts(example_grid):
    return ingest(example_data_path(), example_grid, 10.0)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)
