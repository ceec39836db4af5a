import math
import time

import numpy as np
import pytest

from spdelab.spectral import SpectralOperator, make_example_operator


@pytest.fixture
def small_op():
    return SpectralOperator(np.array([1.0, 4.0, 9.0]))


@pytest.fixture
def cable8():
    return make_example_operator("cable_neumann", 8)


def mc_within(value, mean, se, k=3.0):
    return abs(value - mean) <= k * se + 1e-300


@pytest.fixture
def within():
    return mc_within


_SESSION = {}
WALL_BUDGET_SECONDS = 600


def pytest_sessionstart(session):
    _SESSION["start"] = time.perf_counter()


def pytest_terminal_summary(terminalreporter):
    elapsed = time.perf_counter() - _SESSION.get("start", time.perf_counter())
    verdict = "PASS" if elapsed < WALL_BUDGET_SECONDS else "FAIL"
    terminalreporter.write_line(f"suite wall time: {verdict}  {elapsed:.1f} s (budget {WALL_BUDGET_SECONDS} s)")
