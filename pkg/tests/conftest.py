"""Test configuration and fixtures."""

import pytest
import structlog

from src.graphs.pa_models import MultiGraph, PAConfig, Variant, generate
from src.shared.config import Settings


@pytest.fixture(autouse=True)
def serial_workers(monkeypatch):
    """Run every map on the calling process unless a test asks otherwise."""
    monkeypatch.setattr(Settings, "workers", 1)


@pytest.fixture(scope="function")
def structlog_context():
    """Provide structlog context with a run identifier for tests."""
    with structlog.contextvars.bound_contextvars(subcommand="test"):
        yield


@pytest.fixture
def small_config():
    """A model (b) graph small enough for exact enumeration."""
    return PAConfig(variant=Variant.B, m=2, delta=0.0, n=12, seed=3)


@pytest.fixture
def small_graph(small_config):
    return generate(small_config)


@pytest.fixture
def cycle4():
    """The 4-cycle 0-1-2-3-0."""
    return MultiGraph.from_edges(4, [(0, 1), (1, 2), (2, 3), (3, 0)])


@pytest.fixture
def k4():
    return MultiGraph.from_edges(
        4, [(u, v) for u in range(4) for v in range(u + 1, 4)]
    )


@pytest.fixture
def triangle_double_edge():
    """Triangle with the edge 0-1 doubled and a loop at 2."""
    return MultiGraph.from_edges(3, [(0, 1), (0, 1), (1, 2), (2, 0), (2, 2)])


@pytest.fixture
def two_triangles():
    """Two disjoint triangles."""
    return MultiGraph.from_edges(
        6, [(0, 1), (1, 2), (2, 0), (3, 4), (4, 5), (5, 3)]
    )
