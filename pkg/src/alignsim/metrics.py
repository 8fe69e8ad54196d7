"""Ranking metrics, the query-vs-database evaluation pass and data exports."""
from __future__ import annotations

import io
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from . import autodiff as ad
from .dataio import ensure_ids, fmt_real
from .ged import GroundTruth
from .graph import Graph
from .model import STATS, SimilarityModel, score_pairs


def mse_metric(preds, targets) -> float:
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.shape != targets.shape or preds.size == 0:
        raise ValueError(f"need equal non-empty inputs, got {preds.shape} and {targets.shape}")
    return float(np.mean((preds - targets) ** 2))


def _check_pair(preds, targets):
    x = np.asarray(preds, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"need two equal-length vectors, got {x.shape} and {y.shape}")
    if len(x) < 2:
        raise ValueError("rank correlation needs at least two items")
    return x, y


def spearman(preds, targets) -> tuple[float, bool]:
    """Spearman rho on mid-ranks, plus a flag set when either ranking is constant."""
    x, y = _check_pair(preds, targets)
    rx = rankdata(x) - (len(x) + 1) / 2
    ry = rankdata(y) - (len(y) + 1) / 2
    den = np.sqrt(np.dot(rx, rx) * np.dot(ry, ry))
    if den == 0:
        return 0.0, True
    return float(np.clip(np.dot(rx, ry) / den, -1.0, 1.0)), False


def spearman_rho(preds, targets) -> float:
    return spearman(preds, targets)[0]


def kendall(preds, targets) -> tuple[float, bool]:
    """Kendall tau-b by direct pair counting, plus a degenerate-input flag."""
    x, y = _check_pair(preds, targets)
    iu = np.triu_indices(len(x), k=1)
    sx = np.sign(x[:, None] - x[None, :])[iu]
    sy = np.sign(y[:, None] - y[None, :])[iu]
    n0 = len(sx)
    tx = n0 - np.count_nonzero(sx)
    ty = n0 - np.count_nonzero(sy)
    den = np.sqrt(float(n0 - tx) * float(n0 - ty))
    if den == 0:
        return 0.0, True
    return float(np.sum(sx * sy) / den), False


def kendall_tau(preds, targets) -> float:
    return kendall(preds, targets)[0]


def top_k(scores, k: int, ids=None) -> list:
    """Ids of the ``k`` highest scores; equal scores go to the smaller id first."""
    scores = np.asarray(scores, dtype=np.float64)
    ids = np.arange(len(scores)) if ids is None else np.asarray(ids)
    order = np.lexsort((ids, -scores))
    return ids[order[:k]].tolist()


def precision_at_k(preds, targets, k: int, ids=None) -> float:
    if k <= 0:
        raise ValueError(f"k must be positive, got {k}")
    if k > len(preds):
        raise ValueError(f"k={k} exceeds the database size {len(preds)}")
    return len(set(top_k(preds, k, ids)) & set(top_k(targets, k, ids))) / k


# ----------------------------------------------------------------- reports


@dataclass
class QueryResult:
    query_id: int
    database_ids: list
    predicted: list
    true: list
    rho: float
    tau: float
    p_at_10: float
    p_at_20: float
    rho_degenerate: bool = False
    tau_degenerate: bool = False

    def ranking(self) -> list:
        """(database id, predicted, true) sorted by predicted score, ties by id."""
        order = np.lexsort((np.asarray(self.database_ids), -np.asarray(self.predicted)))
        return [(self.database_ids[k], self.predicted[k], self.true[k]) for k in order]


@dataclass
class RankingReport:
    queries: list
    mse: float
    rho: float
    tau: float
    p_at_10: float
    p_at_20: float
    inference_seconds: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def mse_e3(self) -> float:
        """MSE in units of 1e-3, the convention used when tabulating results."""
        return self.mse * 1e3

    def aggregates(self) -> dict:
        return {"mse": self.mse, "mse_x1e-3": self.mse_e3, "rho": self.rho, "tau": self.tau,
                "p_at_10": self.p_at_10, "p_at_20": self.p_at_20}

    def to_dict(self, include_timing: bool = False) -> dict:
        out = {
            "aggregates": self.aggregates(),
            "queries": [
                {
                    "query": q.query_id,
                    "ranking": [{"id": i, "predicted": p, "true": t} for i, p, t in q.ranking()],
                    "rho": q.rho, "tau": q.tau, "p_at_10": q.p_at_10, "p_at_20": q.p_at_20,
                    "rho_degenerate": q.rho_degenerate, "tau_degenerate": q.tau_degenerate,
                }
                for q in self.queries
            ],
        }
        if include_timing:
            out["inference_seconds"] = self.inference_seconds
        return out

    def to_json(self, include_timing: bool = False) -> str:
        return json.dumps(self.to_dict(include_timing), indent=1) + "\n"

    def query(self, query_id: int) -> QueryResult:
        for q in self.queries:
            if q.query_id == query_id:
                return q
        raise KeyError(query_id)


def rank_queries(
    query_ids: Sequence[int],
    database_ids: Sequence[int],
    predict_row: Callable[[int, list], np.ndarray],
    truth: GroundTruth,
) -> RankingReport:
    """Score every query against the whole database and aggregate the metrics.

    rho, tau and p@k are computed per query and averaged; MSE is pooled over
    all query x database pairs.
    """
    db = sorted(database_ids)
    results = []
    sq_err = []
    started = time.perf_counter()
    rows = {q: np.asarray(predict_row(q, db), dtype=np.float64) for q in query_ids}
    elapsed = time.perf_counter() - started
    for q in query_ids:
        pred = rows[q]
        true = np.array([truth.similarity(q, d) for d in db])
        sq_err.append((pred - true) ** 2)
        rho, rho_flag = spearman(pred, true) if len(db) >= 2 else (0.0, True)
        tau, tau_flag = kendall(pred, true) if len(db) >= 2 else (0.0, True)
        k10, k20 = min(10, len(db)), min(20, len(db))
        results.append(QueryResult(
            q, list(db), pred.tolist(), true.tolist(), rho, tau,
            precision_at_k(pred, true, k10, db), precision_at_k(pred, true, k20, db),
            rho_flag, tau_flag,
        ))
    return RankingReport(
        results,
        mse=float(np.mean(np.concatenate(sq_err))),
        rho=float(np.mean([r.rho for r in results])),
        tau=float(np.mean([r.tau for r in results])),
        p_at_10=float(np.mean([r.p_at_10 for r in results])),
        p_at_20=float(np.mean([r.p_at_20 for r in results])),
        inference_seconds=elapsed,
    )


class Scorer:
    """Encodes a whole dataset once and scores one query row at a time.

    Both ``evaluate`` and single-graph queries go through ``row`` so their
    scores agree bit for bit.
    """

    def __init__(self, model: SimilarityModel, graphs: Sequence[Graph]):
        self.model = model
        self.graphs = sorted(graphs, key=lambda g: g.id)
        self.pos = {g.id: k for k, g in enumerate(self.graphs)}
        with ad.no_grad():
            self.encoding = model.encode_batch(model.batch(self.graphs))

    def row(self, query_id: int, database_ids: Sequence[int]) -> np.ndarray:
        ii = np.full(len(database_ids), self.pos[query_id], dtype=np.intp)
        jj = np.array([self.pos[d] for d in database_ids], dtype=np.intp)
        with ad.no_grad():
            return score_pairs(self.encoding, ii, jj, self.model.params, self.model.config).data.copy()

    def top(self, query_id: int, database_ids: Sequence[int], k: int) -> list:
        db = sorted(database_ids)
        scores = self.row(query_id, db)
        order = np.lexsort((np.asarray(db), -scores))[:k]
        return [(db[i], float(scores[i])) for i in order]


def evaluate(model: SimilarityModel, graphs: Sequence[Graph], split, truth: GroundTruth) -> RankingReport:
    """Query x database evaluation (database = train + val)."""
    ensure_ids(graphs, split.all_ids(), "split ids")
    before = STATS.areg_calls
    started = time.perf_counter()
    scorer = Scorer(model, graphs)
    report = rank_queries(sorted(split.query), split.database, scorer.row, truth)
    report.inference_seconds = time.perf_counter() - started
    report.extra["areg_calls"] = STATS.areg_calls - before
    return report


# ------------------------------------------------------------------ exports


def _cosine_matrix(a: np.ndarray, b: np.ndarray, eps: float = ad.COSINE_EPS) -> np.ndarray:
    na = np.linalg.norm(a, axis=1)[:, None]
    nb = np.linalg.norm(b, axis=1)[None, :]
    return (a @ b.T) / np.maximum(na * nb, eps)


def export_heatmap(model: SimilarityModel, g_i: Graph, g_j: Graph) -> np.ndarray:
    """Cosine similarity between final-layer node embeddings of two graphs (N_i x N_j)."""
    return np.clip(_cosine_matrix(model.node_embeddings(g_i), model.node_embeddings(g_j)), -1.0, 1.0)


def export_embeddings(model: SimilarityModel, graphs: Sequence[Graph]) -> tuple[list, np.ndarray]:
    ordered = sorted(graphs, key=lambda g: g.id)
    return [g.id for g in ordered], model.embeddings(ordered)


def matrix_csv(matrix: np.ndarray, row_ids: Optional[Sequence] = None, header: Optional[Sequence[str]] = None) -> str:
    buf = io.StringIO()
    if header is not None:
        buf.write(",".join(header) + "\n")
    for k, row in enumerate(np.atleast_2d(matrix)):
        cells = [fmt_real(float(v)) for v in row]
        if row_ids is not None:
            cells.insert(0, str(row_ids[k]))
        buf.write(",".join(cells) + "\n")
    return buf.getvalue()


def write_heatmap_csv(path, matrix: np.ndarray) -> None:
    Path(path).write_text(matrix_csv(matrix), encoding="utf-8")


def write_embeddings_csv(path, ids: Sequence[int], matrix: np.ndarray) -> None:
    header = ["graph_id"] + [f"z{k}" for k in range(matrix.shape[1])]
    Path(path).write_text(matrix_csv(matrix, ids, header), encoding="utf-8")
