import sys

import numpy as np
import pytest

from topocl.topology import WeightedGraph


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def triangle():
    return WeightedGraph.from_edges(3, [(0, 1, 3.0), (1, 2, 2.0), (0, 2, 1.0)])


@pytest.fixture
def toy_network():
    # five nodes, six edges e1 < ... < e6; spanning tree {e2, e4, e5, e6}
    return WeightedGraph.from_edges(5, [
        (1, 3, 1.0),  # e1
        (3, 4, 2.0),  # e2
        (0, 2, 3.0),  # e3
        (2, 3, 4.0),  # e4
        (1, 2, 5.0),  # e5
        (0, 1, 6.0),  # e6
    ])


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
