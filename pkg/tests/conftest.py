"""
Shared test fixtures and configuration for gridfreq tests.
"""

import numpy as np
import pytest

from gridfreq.control import CostModel
from gridfreq.dynamics import Perturbation
from gridfreq.grid import GENERATOR, GridSpec, LineSpec, NodeParams
from gridfreq.scenario import bundled_scenario, load_scenario

TEN_NODE_COST = (20.0, 20.0, 200.0, 200.0, 10.0, 20.0, 14.0, 18.0, 10.0, 20.0)
TEN_NODE_OPTIMAL_COST = 23.278155
TEN_NODE_CUBIC_OPTIMAL_COST = 8.838


def make_grid(power, lines, inertia=None, damping=None, cost=None):
    """All-generator grid from per-node lists and (i, j, B) triples, 0-based."""
    n = len(power)
    inertia = inertia if inertia is not None else [0.1] * n
    damping = damping if damping is not None else [1.0] * n
    cost = cost if cost is not None else [1.0] * n
    nodes = tuple(
        NodeParams(GENERATOR, float(m), float(d), float(p), float(a))
        for m, d, p, a in zip(inertia, damping, power, cost)
    )
    return GridSpec(nodes, tuple(LineSpec(i, j, float(b)) for i, j, b in lines))


def random_connected_grid(rng, n, extra_lines=None, b_range=(0.2, 2.0)):
    """
    Random connected all-generator grid: a random spanning tree plus extra lines,
    balanced random injections, inertia/damping/cost in moderate ranges.
    """
    order = rng.permutation(n)
    pairs = set()
    for k in range(1, n):
        i, j = int(order[k]), int(order[rng.integers(0, k)])
        pairs.add((min(i, j), max(i, j)))
    extra = rng.integers(0, n) if extra_lines is None else extra_lines
    for _ in range(int(extra)):
        i, j = (int(x) for x in rng.choice(n, size=2, replace=False))
        pairs.add((min(i, j), max(i, j)))

    power = rng.uniform(-3.0, 3.0, size=n)
    power -= power.mean()
    lines = [(i, j, rng.uniform(*b_range)) for i, j in sorted(pairs)]
    return make_grid(
        power,
        lines,
        inertia=rng.uniform(0.1, 1.0, size=n),
        damping=rng.uniform(0.5, 2.0, size=n),
        cost=rng.uniform(1.0, 10.0, size=n),
    )


@pytest.fixture
def two_node_grid():
    """a=(1,1), B=1, D=(1,1), M=(0.1,0.1), p0=0."""
    return make_grid([0.0, 0.0], [(0, 1, 1.0)])


@pytest.fixture
def two_node_step():
    return [Perturbation(node=0, delta_p=-1.0)]


@pytest.fixture
def ten_node_scenario():
    return load_scenario(bundled_scenario("tennode"))


@pytest.fixture
def twonode_scenario():
    return load_scenario(bundled_scenario("twonode"))


@pytest.fixture
def ten_node_grid(ten_node_scenario):
    return ten_node_scenario.grid


@pytest.fixture
def ten_node_step(ten_node_scenario):
    """Load increase of 5 at node 3."""
    return list(ten_node_scenario.perturbations)


@pytest.fixture
def ten_node_cost():
    return CostModel(TEN_NODE_COST)


@pytest.fixture
def cubic_cost():
    return CostModel(TEN_NODE_COST, family="power_law", gamma=3.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240531)


@pytest.fixture
def random_grid_factory():
    return random_connected_grid


# Pytest configuration
def pytest_configure(config):
    """Configure pytest with custom markers."""
    config.addinivalue_line(
        "markers", "slow: marks tests as slow (deselect with '-m \"not slow\"')"
    )
    config.addinivalue_line(
        "markers", "integration: marks tests as integration tests"
    )
    config.addinivalue_line(
        "markers", "unit: marks tests as unit tests"
    )


def pytest_collection_modifyitems(config, items):
    """Automatically mark tests based on their names."""
    for item in items:
        if "test_main" in item.nodeid or "cli" in item.name:
            item.add_marker(pytest.mark.integration)
        elif "test_" in item.name:
            item.add_marker(pytest.mark.unit)

        if any(pattern in item.name for pattern in ["slow", "long_run"]):
            item.add_marker(pytest.mark.slow)
