import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from alignsim.ged import GroundTruth, GroundTruthEntry
from alignsim.graph import Permutation, apply_permutation, random_graph
from alignsim.metrics import (
    export_embeddings,
    export_heatmap,
    kendall,
    kendall_tau,
    matrix_csv,
    mse_metric,
    precision_at_k,
    rank_queries,
    spearman,
    spearman_rho,
    top_k,
)
from alignsim.model import ModelConfig, SimilarityModel

from conftest import VOCAB3, small_graphs

# ---------------------------------------------------------------- references


def ref_mse(a, b):
    total = 0.0
    for x, y in zip(a, b):
        total += (x - y) * (x - y)
    return total / len(a)


def ref_midranks(x):
    n = len(x)
    return [1 + sum(x[j] < x[i] for j in range(n)) + 0.5 * (sum(x[j] == x[i] for j in range(n)) - 1) for i in range(n)]


def ref_pearson(a, b):
    n = len(a)
    ma, mb = sum(a) / n, sum(b) / n
    cov = sum((x - ma) * (y - mb) for x, y in zip(a, b))
    va = sum((x - ma) ** 2 for x in a)
    vb = sum((y - mb) ** 2 for y in b)
    if va == 0 or vb == 0:
        return 0.0
    return cov / math.sqrt(va * vb)


def ref_spearman(a, b):
    return ref_pearson(ref_midranks(a), ref_midranks(b))


def ref_tau_b(a, b):
    n = len(a)
    conc = disc = tie_a = tie_b = 0
    for i in range(n):
        for j in range(i + 1, n):
            da, db = a[i] - a[j], b[i] - b[j]
            if da == 0:
                tie_a += 1
            if db == 0:
                tie_b += 1
            if da * db > 0:
                conc += 1
            elif da * db < 0:
                disc += 1
    n0 = n * (n - 1) // 2
    den = math.sqrt((n0 - tie_a) * (n0 - tie_b))
    return 0.0 if den == 0 else (conc - disc) / den


def ref_top(scores, k, ids):
    return sorted(range(len(scores)), key=lambda i: (-scores[i], ids[i]))[:k]


def ref_p_at_k(pred, true, k, ids):
    a = {ids[i] for i in ref_top(pred, k, ids)}
    b = {ids[i] for i in ref_top(true, k, ids)}
    return len(a & b) / k


def random_fixture(rng):
    n = int(rng.integers(2, 30))
    if rng.random() < 0.5:
        # coarse values so that ties are common
        return rng.integers(0, 5, n).astype(float), rng.integers(0, 5, n).astype(float)
    return rng.random(n), rng.random(n)


# --------------------------------------------------------------------- tests


def test_mse_examples():
    assert mse_metric([0.3, 0.4], [0.3, 0.4]) == 0.0
    assert mse_metric([0, 1], [1, 0]) == 1.0
    with pytest.raises(ValueError):
        mse_metric([], [])


def test_spearman_examples():
    x = [0.1, 0.5, 0.3, 0.9]
    assert spearman_rho(x, x) == 1.0
    assert spearman_rho(x, [-v for v in x]) == -1.0
    rho, flag = spearman([1, 1, 1], [1, 2, 3])
    assert rho == 0.0 and flag
    with pytest.raises(ValueError):
        spearman_rho([1.0], [1.0])


def test_kendall_examples():
    assert kendall_tau([1, 2, 3, 4], [1, 2, 3, 4]) == 1.0
    assert kendall_tau([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(2 / 3)
    tau, flag = kendall([2, 2, 2], [1, 2, 3])
    assert tau == 0.0 and flag


def test_precision_examples():
    s = [0.9, 0.1, 0.5, 0.7]
    assert precision_at_k(s, s, 2) == 1.0
    assert precision_at_k([1, 1, 0, 0], [0, 0, 1, 1], 2) == 0.0
    with pytest.raises(ValueError):
        precision_at_k(s, s, 0)
    with pytest.raises(ValueError):
        precision_at_k(s, s, 5)


def test_top_k_id_tie_break():
    assert top_k([0.5, 0.9, 0.5, 0.5], 3, ids=[30, 10, 20, 5]) == [10, 5, 20]


def test_precision_exhaustive_ties():
    """Every target vector over 3 levels on 6 items, against the id-order reference."""
    ids = [4, 1, 5, 0, 3, 2]
    rng = np.random.default_rng(0)
    preds = [rng.integers(0, 3, 6).astype(float) for _ in range(5)]
    for true in itertools.product(range(3), repeat=6):
        true = np.array(true, dtype=float)
        for pred in preds:
            for k in (1, 2, 3, 5):
                assert precision_at_k(pred, true, k, ids) == ref_p_at_k(pred, true, k, ids)


def test_random_fixtures_against_references():
    rng = np.random.default_rng(42)
    for _ in range(300):
        a, b = random_fixture(rng)
        assert mse_metric(a, b) == pytest.approx(ref_mse(a, b), rel=1e-12, abs=1e-15)
        assert abs(spearman_rho(a, b) - ref_spearman(a, b)) < 1e-12
        assert abs(kendall_tau(a, b) - ref_tau_b(a, b)) < 1e-12
        ids = rng.permutation(len(a)).tolist()
        k = int(rng.integers(1, len(a) + 1))
        assert precision_at_k(a, b, k, ids) == ref_p_at_k(a, b, k, ids)


@given(st.lists(st.floats(-5, 5), min_size=2, max_size=15))
def test_rank_metrics_bounded(x):
    y = list(reversed(x))
    for f in (spearman_rho, kendall_tau):
        assert -1.0 <= f(x, y) <= 1.0


@given(st.lists(st.integers(0, 3), min_size=2, max_size=15))
def test_self_agreement(x):
    rho, flag = spearman(x, x)
    assert flag or rho == pytest.approx(1.0)


def _truth(ids, fn):
    return GroundTruth(GroundTruthEntry(a, b, 0, fn(a, b)) for a in ids for b in ids if a <= b)


def test_oracle_predictor_report():
    ids = list(range(12))
    sim = lambda a, b: math.exp(-abs(a - b) / 3)  # noqa: E731
    truth = _truth(ids, sim)
    rep = rank_queries([0, 1], ids[2:], lambda q, db: np.array([sim(q, d) for d in db]), truth)
    assert rep.rho == rep.tau == rep.p_at_10 == 1.0 and rep.mse == 0.0
    for q in rep.queries:
        assert sorted(q.database_ids) == ids[2:]


def test_constant_predictor_report():
    ids = list(range(25))
    truth = _truth(ids, lambda a, b: math.exp(-abs(a - b)))
    db = ids[1:]
    rep = rank_queries([0], db, lambda q, d: np.full(len(d), 0.5), truth)
    q = rep.queries[0]
    assert q.rho_degenerate and q.rho == 0.0 and q.tau_degenerate
    # predicted top-10 is the ten smallest ids, which here are also the true top-10
    assert q.p_at_10 == ref_p_at_k([0.5] * 24, [truth.similarity(0, d) for d in db], 10, db)


def test_report_json_stable():
    ids = list(range(8))
    truth = _truth(ids, lambda a, b: 1.0 / (1 + abs(a - b)))
    rep = rank_queries([7], ids[:7], lambda q, d: np.linspace(0, 1, len(d)), truth)
    data = json.loads(rep.to_json())
    assert "inference_seconds" not in data
    assert "inference_seconds" in rep.to_dict(include_timing=True)
    assert [r["id"] for r in data["queries"][0]["ranking"]] == [6, 5, 4, 3, 2, 1, 0]
    assert data["aggregates"]["mse_x1e-3"] == pytest.approx(rep.mse * 1000)


def test_heatmap_isomorphic_rows():
    model = SimilarityModel(ModelConfig(L=2, layer_dims=[8, 8]), VOCAB3, seed=3)
    g = random_graph(6, 6, 0.4, VOCAB3, 2)
    p = Permutation.random(6, np.random.default_rng(1))
    heat = export_heatmap(model, g, apply_permutation(g, p))
    assert heat.shape == (6, 6)
    for i in range(6):
        assert heat[i, p(i)] == pytest.approx(1.0, abs=1e-12)
        assert heat[i].max() == pytest.approx(1.0, abs=1e-12)


def test_embeddings_export_sorted():
    model = SimilarityModel(ModelConfig(L=2, layer_dims=[4, 4]), VOCAB3)
    gs = small_graphs(5)
    ids, mat = export_embeddings(model, list(reversed(gs)))
    assert ids == [0, 1, 2, 3, 4] and mat.shape == (5, 8)
    text = matrix_csv(mat, ids, ["graph_id"] + [f"z{k}" for k in range(8)])
    assert text.splitlines()[0].startswith("graph_id,z0")
    assert len(text.splitlines()) == 6
