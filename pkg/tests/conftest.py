import numpy as np
import pytest
from hypothesis import settings

from dacnet.graph import Graph, path_graph, random_geometric_graph

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


@pytest.fixture
def p5() -> Graph:
    return path_graph(5)


@pytest.fixture(scope="session")
def rgg50():
    return random_geometric_graph(50, 7)


def random_connected_graph(n: int, extra: int, seed: int) -> Graph:
    """Random spanning tree plus ``extra`` random chords."""
    rng = np.random.default_rng(seed)
    edges = [(int(rng.integers(i)), i) for i in range(1, n)]
    for _ in range(extra):
        u, v = rng.integers(n, size=2)
        if u != v:
            edges.append((int(u), int(v)))
    return Graph.from_edges(n, edges)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
