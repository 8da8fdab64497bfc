import json
from pathlib import Path

import numpy as np
import pytest

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def frozen():
    """Reference values produced by ``data/freeze_oracles.py``."""
    return json.loads((DATA / "frozen_oracles.json").read_text())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def complex_array(pairs):
    arr = np.asarray(pairs, dtype=float)
    return arr[..., 0] + 1j * arr[..., 1]


ACCEPTANCE_LINES = []


def record_criterion(number, title, passed, detail):
    line = f"criterion {number} {'PASS' if passed else 'FAIL'}: {title} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def pytest_addoption(parser):
    parser.addoption("--spot-check", action="store_true", default=False,
                     help="run the optional bond-dimension-16 learning spot check")
