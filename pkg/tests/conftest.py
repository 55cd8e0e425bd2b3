import math

import numpy as np
import pytest

from blm.fem import TaylorHoodSpace
from blm.mesh import Geometry, generate_channel_mesh
from blm.verify import closed_box


def square_mesh(n):
    """Structured unit square, ``n`` cells per side, channel-style tags."""
    return generate_channel_mesh(Geometry.unit_square(), math.sqrt(2.0) / n)


@pytest.fixture(scope="session")
def square4():
    return square_mesh(4)


@pytest.fixture(scope="session")
def space4(square4):
    return TaylorHoodSpace(square4)


@pytest.fixture(scope="session")
def box_space():
    return TaylorHoodSpace(closed_box(4))


@pytest.fixture(scope="session")
def channel_coarse():
    return generate_channel_mesh(target_h=0.25)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
