import math

import networkx as nx
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from alignsim.ged import (
    GedBudgetExceeded,
    GedPairError,
    GedSizeError,
    alignment_cost,
    astar_ged,
    brute_force_ged,
    ged,
    ground_truth_table,
    similarity_from_ged,
)
from alignsim.graph import Graph, LabelVocabulary, Permutation, apply_permutation, random_graph

from conftest import molecule_pair, graphs, small_graphs


def to_nx(g):
    h = nx.Graph()
    for k in range(g.n):
        h.add_node(k, label=None if g.labels is None else g.labels[k])
    h.add_edges_from(g.edges.tolist())
    return h


def nx_ged(g1, g2):
    """Independent reference: networkx's exact search with unit costs."""
    return int(nx.graph_edit_distance(to_nx(g1), to_nx(g2), node_match=lambda a, b: a["label"] == b["label"]))


def test_identical_graphs():
    g = random_graph(5, 5, 0.5, LabelVocabulary(("a", "b")), 3)
    r = brute_force_ged(g, g)
    assert (r.ged, r.similarity, r.nged) == (0, 1.0, 0.0)


def test_molecule_fixture():
    g_i, g_j = molecule_pair()
    r = brute_force_ged(g_i, g_j)
    assert r.ged == 3
    assert (r.breakdown.c, r.breakdown.m) == (4, 1)
    assert alignment_cost(g_i, g_j, range(5)) == r.breakdown
    assert r.nged == pytest.approx(3 / 5)
    assert r.similarity == pytest.approx(math.exp(-0.6))
    assert astar_ged(g_i, g_j).ged == 3


def test_pure_relabel():
    r = brute_force_ged(Graph.from_edges(1, [], ("a",)), Graph.from_edges(1, [], ("b",)))
    assert (r.breakdown.c, r.breakdown.m, r.ged) == (0, 1, 1)


def test_path_vs_triangle():
    path = Graph.from_edges(3, [(0, 1), (1, 2)])
    tri = Graph.from_edges(3, [(0, 1), (1, 2), (0, 2)])
    assert brute_force_ged(path, tri).ged == 1
    assert astar_ged(path, tri).ged == 1


def test_insertion_counts_node_and_edges():
    # one extra node with two incident edges: 1 node insertion + 2 edge insertions
    a = Graph.from_edges(2, [(0, 1)])
    b = Graph.from_edges(3, [(0, 1), (1, 2), (0, 2)])
    assert brute_force_ged(a, b).ged == 3
    assert astar_ged(a, b).ged == 3


def test_brute_guard():
    g = random_graph(9, 9, 0.3, None, 0)
    with pytest.raises(GedSizeError, match="astar_ged"):
        brute_force_ged(g, g)


def test_astar_identical_10():
    g = random_graph(10, 10, 0.3, LabelVocabulary(("a", "b")), 5)
    assert astar_ged(g, g).ged == 0


def test_astar_budget():
    g1 = random_graph(9, 9, 0.5, LabelVocabulary(("a", "b")), 1)
    g2 = random_graph(9, 9, 0.5, LabelVocabulary(("a", "b")), 2)
    with pytest.raises(GedBudgetExceeded) as info:
        astar_ged(g1, g2, node_budget=5)
    assert info.value.lower <= info.value.upper


def test_similarity_formula():
    assert similarity_from_ged(0, 5, 5) == (0.0, 1.0)
    nged, sim = similarity_from_ged(3, 6, 6)
    assert nged == 0.5 and sim == pytest.approx(0.60653, abs=1e-5)
    nged, sim = similarity_from_ged(3, 5, 4)
    assert nged == pytest.approx(2 / 3) and sim == pytest.approx(0.51342, abs=1e-5)


def test_brute_tie_break_lexicographic():
    # two isolated same-label nodes: both alignments cost 0, identity wins
    g = Graph.from_edges(2, [], ("a", "a"))
    assert brute_force_ged(g, g).permutation == Permutation((0, 1))


def test_ground_truth_identical():
    g = Graph.from_edges(3, [(0, 1)], ("a", "a", "b"))
    table = ground_truth_table([g.with_id(k) for k in range(3)])
    assert len(table) == 6
    assert all(e.ged == 0 for e in table)


def test_ground_truth_symmetric_and_astar_equal():
    gs = [random_graph(5, 5, 0.4, LabelVocabulary(("a", "b")), s, id=s) for s in range(10)]
    brute = ground_truth_table(gs, "brute")
    assert brute == ground_truth_table(gs, "astar")
    for e in brute:
        assert brute.entry(e.g2, e.g1) == e


def test_ground_truth_error_names_pair():
    big = random_graph(9, 9, 0.2, None, 0, id=7)
    with pytest.raises(GedPairError) as info:
        ground_truth_table([big], "brute")
    assert info.value.pair == (7, 7)


def test_against_networkx():
    gs = small_graphs(8, 2, 5, 0.4, seed=4)
    for a in gs:
        for b in gs:
            assert brute_force_ged(a, b).ged == nx_ged(a, b)


def test_metric_on_random_set():
    gs = small_graphs(10, 3, 6, 0.35, seed=11)
    d = np.array([[brute_force_ged(a, b).ged for b in gs] for a in gs])
    assert np.all(np.diag(d) == 0)
    assert np.array_equal(d, d.T)
    for i in range(10):
        for j in range(10):
            for k in range(10):
                assert d[i, k] <= d[i, j] + d[j, k]


@given(graphs(1, 6, labeled=True), graphs(1, 6, labeled=True))
def test_astar_equals_brute(g1, g2):
    assert astar_ged(g1, g2).ged == brute_force_ged(g1, g2).ged


@given(graphs(1, 6, labeled=False), graphs(1, 6, labeled=False))
def test_astar_equals_brute_unlabeled(g1, g2):
    assert astar_ged(g1, g2).ged == brute_force_ged(g1, g2).ged


@given(graphs(1, 6), graphs(1, 6))
def test_breakdown_identity(g1, g2):
    r = brute_force_ged(g1, g2)
    assert r.breakdown.c % 2 == 0
    assert r.ged == r.breakdown.c // 2 + r.breakdown.m
    assert r.breakdown.m <= max(g1.n, g2.n)
    assert alignment_cost(g1, g2, r.permutation.mapping) == r.breakdown
    a = astar_ged(g1, g2)
    assert alignment_cost(g1, g2, a.permutation.mapping) == a.breakdown
    assert 0 < r.similarity <= 1


@given(graphs(1, 6, labeled=True), graphs(1, 6, labeled=True), st.randoms(use_true_random=False))
def test_permutation_invariance(g1, g2, r):
    p = Permutation(tuple(r.sample(range(g2.n), g2.n)))
    assert brute_force_ged(g1, apply_permutation(g2, p)).ged == brute_force_ged(g1, g2).ged


@given(graphs(1, 6, labeled=True), graphs(1, 6, labeled=True))
def test_label_multiset_lower_bound(g1, g2):
    from collections import Counter

    c1, c2 = Counter(g1.labels), Counter(g2.labels)
    common = sum((c1 & c2).values())
    bound = max(g1.n, g2.n) - common
    assert astar_ged(g1, g2).ged >= bound


def test_dispatch():
    g = Graph.from_edges(2, [(0, 1)])
    assert ged(g, g, "brute").ged == ged(g, g, "astar").ged == 0
    with pytest.raises(ValueError):
        ged(g, g, "beam")
