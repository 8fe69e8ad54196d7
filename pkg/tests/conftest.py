import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from alignsim.graph import Graph, LabelVocabulary, random_graph

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

VOCAB3 = LabelVocabulary(("a", "b", "c"))

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line[1])


@st.composite
def graphs(draw, n_min=1, n_max=6, labeled=None, gid=0):
    """Arbitrary (possibly disconnected) simple graphs."""
    n = draw(st.integers(n_min, n_max))
    bits = draw(st.lists(st.booleans(), min_size=n * (n - 1) // 2, max_size=n * (n - 1) // 2))
    iu = np.triu_indices(n, k=1)
    adj = np.zeros((n, n), dtype=bool)
    adj[iu] = bits
    adj = adj | adj.T
    if labeled is None:
        labeled = draw(st.booleans())
    labels = tuple(draw(st.lists(st.sampled_from("abc"), min_size=n, max_size=n))) if labeled else None
    return Graph(id=gid, adjacency=adj, labels=labels)


def molecule_pair():
    """Two 5-node molecules one relabel and one moved bond apart.

    Reconstructed fixture: g_i is a labelled 5-ring; g_j drops bond
    4-0, adds bond 1-3 and carries a different label on node 4. Under the
    identity alignment two edges differ (c = 4) and one label differs (m = 1).
    """
    g_i = Graph.from_edges(5, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 0)], ("C", "C", "O", "C", "N"), id=0)
    g_j = Graph.from_edges(5, [(0, 1), (1, 2), (2, 3), (3, 4), (1, 3)], ("C", "C", "O", "C", "C"), id=1)
    return g_i, g_j


def small_graphs(count, n_min=3, n_max=6, edge_prob=0.3, vocab=VOCAB3, seed=0):
    return [random_graph(n_min, n_max, edge_prob, vocab, seed * 1000 + k, id=k) for k in range(count)]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
