import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gfndiv.envs import SeqEnv, SetEnv


@pytest.fixture
def tiny_set():
    return SetEnv(3, 2, [1.0, 2.0, 3.0])


@pytest.fixture
def small_set():
    return SetEnv(4, 2, [0.3, -0.5, 0.8, 0.1])


@pytest.fixture
def tiny_seq():
    return SeqEnv(2, 2, [0.5, -0.4], [1.0, 0.7])


def pytest_configure(config):
    np.seterr(over="ignore", under="ignore")


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
