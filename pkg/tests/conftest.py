import numpy as np
import pytest

from mgmc.graph import Graph


def random_graph(rng, n, p=0.4, weighted=True, connected=False) -> Graph:
    W = np.triu(rng.random((n, n)) < p, 1).astype(float)
    if weighted:
        W *= rng.uniform(0.5, 2.0, size=(n, n))
    if connected:
        # a path guarantees connectivity
        for i in range(n - 1):
            W[i, i + 1] = max(W[i, i + 1], 1.0)
    W = W + W.T
    return Graph.from_adjacency(W)


def ring(n) -> Graph:
    return Graph.from_edges(n, [(i, (i + 1) % n, 1.0) for i in range(n)])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
