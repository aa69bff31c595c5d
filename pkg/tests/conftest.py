import numpy as np
import pytest

from reglab.core import Lattice, Model, build_kernel, nearest_neighbor_stencil


@pytest.fixture
def torus8():
    return build_kernel(nearest_neighbor_stencil(1), Lattice((8,)))


@pytest.fixture
def logistic8(torus8):
    return Model.logistic(1.0, 1.0, 1.0, 1.0, torus8)


def single_site_kernel():
    """One-site torus with m(0, 0) = 1: migration has no effect."""
    return build_kernel({(0,): 1.0}, Lattice((1,)))


def logistic_solution(x0, gamma, K, t):
    e = np.exp(gamma * K * t)
    return K * x0 * e / (K + x0 * (e - 1.0))


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
