"""Dataset / ground-truth / split files and oracle-labelled synthetic data.

Dataset JSON::

    {"vocabulary": ["C", "N", ...] | null,
     "graphs": [{"id": 0, "nodes": [{"id": 0, "label": "C"}, ...], "edges": [[0, 1], ...]}, ...]}

Ground truth CSV: ``g1,g2,ged,similarity`` with ``g1 <= g2``, sorted, the
similarity printed with 17 significant digits. Split JSON:
``{"train": [...], "val": [...], "query": [...]}``.
"""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .ged import BRUTE_FORCE_MAX_NODES, GroundTruth, GroundTruthEntry, ground_truth_table
from .graph import ConfigurationError, Graph, LabelVocabulary, random_graph, validate_graph

ASTAR_SYNTHETIC_MAX_NODES = 12


class DatasetFormatError(ValueError):
    pass


def fmt_real(x: float) -> str:
    return f"{x:.17g}"


# ------------------------------------------------------------------ dataset


def dataset_to_dict(graphs: Sequence[Graph]) -> dict:
    vocab = LabelVocabulary.from_graphs(graphs)
    out = []
    for g in graphs:
        labels = g.labels if g.labels is not None else (None,) * g.n
        out.append({
            "id": int(g.id),
            "nodes": [{"id": k, "label": lab} for k, lab in enumerate(labels)],
            "edges": [[int(u), int(v)] for u, v in g.edges],
        })
    return {"vocabulary": list(vocab.tokens) if vocab.labeled else None, "graphs": out}


def dumps_dataset(graphs: Sequence[Graph]) -> str:
    return json.dumps(dataset_to_dict(graphs), indent=1) + "\n"


def save_dataset(path, graphs: Sequence[Graph]) -> None:
    Path(path).write_text(dumps_dataset(graphs), encoding="utf-8")


def _graph_from_record(rec: dict, where: str) -> Graph:
    try:
        gid = rec["id"]
        nodes = rec["nodes"]
        edges = rec["edges"]
    except (KeyError, TypeError) as exc:
        raise DatasetFormatError(f"{where}: missing field {exc}") from None
    if not isinstance(gid, int):
        raise DatasetFormatError(f"{where}: graph id must be an integer, got {gid!r}")
    n = len(nodes)
    if n == 0:
        raise DatasetFormatError(f"graph {gid}: no nodes")
    labels: list = [None] * n
    seen = set()
    for node in nodes:
        nid = node.get("id") if isinstance(node, dict) else None
        if not isinstance(nid, int) or not 0 <= nid < n or nid in seen:
            raise DatasetFormatError(f"graph {gid}: node ids must be 0..{n - 1} without repeats (bad id {nid!r})")
        seen.add(nid)
        labels[nid] = node.get("label")
    n_null = sum(lab is None for lab in labels)
    if 0 < n_null < n:
        raise DatasetFormatError(f"graph {gid}: mixes labeled and unlabeled nodes")
    adj = np.zeros((n, n), dtype=bool)
    for e in edges:
        if not (isinstance(e, list) and len(e) == 2 and all(isinstance(x, int) for x in e)):
            raise DatasetFormatError(f"graph {gid}: malformed edge {e!r}")
        u, v = e
        if not (0 <= u < n and 0 <= v < n):
            raise DatasetFormatError(f"graph {gid}: edge {e} references a missing node")
        if u == v:
            raise DatasetFormatError(f"graph {gid}: self edge {e}")
        if adj[u, v]:
            raise DatasetFormatError(f"graph {gid}: duplicate edge {e}")
        adj[u, v] = adj[v, u] = True
    g = Graph(id=gid, adjacency=adj, labels=None if n_null else tuple(labels))
    problems = validate_graph(g)
    if problems:
        raise DatasetFormatError(f"graph {gid}: {'; '.join(problems)}")
    return g


def loads_dataset(text: str, source: str = "<string>") -> tuple[list, LabelVocabulary]:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(
            f"{source}: parse error at line {exc.lineno} column {exc.colno} (byte {exc.pos}): {exc.msg}"
        ) from None
    if not isinstance(raw, dict) or not isinstance(raw.get("graphs"), list):
        raise DatasetFormatError(f"{source}: expected an object with a 'graphs' list")
    graphs = [_graph_from_record(rec, f"{source}: graphs[{k}]") for k, rec in enumerate(raw["graphs"])]
    ids = [g.id for g in graphs]
    if len(set(ids)) != len(ids):
        raise DatasetFormatError(f"{source}: duplicate graph ids")
    kinds = {g.labeled for g in graphs}
    if len(kinds) > 1:
        raise DatasetFormatError(f"{source}: mixes labeled and unlabeled graphs")
    vocab = LabelVocabulary.from_graphs(graphs)
    declared = raw.get("vocabulary")
    if declared is not None and vocab.labeled:
        extra = set(vocab.tokens) - set(declared)
        if extra:
            raise DatasetFormatError(f"{source}: labels {sorted(extra, key=str)} missing from the vocabulary")
        vocab = LabelVocabulary(tuple(sorted(declared, key=str)))
    return graphs, vocab


def load_dataset(path) -> tuple[list, LabelVocabulary]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise DatasetFormatError(f"{path}: {exc}") from None
    return loads_dataset(text, str(path))


# ------------------------------------------------------------- ground truth


def dumps_ground_truth(gt: GroundTruth) -> str:
    buf = io.StringIO()
    buf.write("g1,g2,ged,similarity\n")
    for e in gt:
        buf.write(f"{e.g1},{e.g2},{e.ged},{fmt_real(e.similarity)}\n")
    return buf.getvalue()


def save_ground_truth(path, gt: GroundTruth) -> None:
    Path(path).write_text(dumps_ground_truth(gt), encoding="utf-8")


def load_ground_truth(path) -> GroundTruth:
    entries = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["g1", "g2", "ged", "similarity"]:
            raise DatasetFormatError(f"{path}: bad ground-truth header {header}")
        for lineno, row in enumerate(reader, start=2):
            try:
                g1, g2, ged, sim = int(row[0]), int(row[1]), int(row[2]), float(row[3])
            except (ValueError, IndexError):
                raise DatasetFormatError(f"{path}: line {lineno}: malformed row {row}") from None
            entries.append(GroundTruthEntry(g1, g2, ged, sim))
    return GroundTruth(entries)


# -------------------------------------------------------------------- split


def save_split(path, split) -> None:
    Path(path).write_text(json.dumps(split.to_dict(), indent=1) + "\n", encoding="utf-8")


def load_split(path):
    from .train import Split

    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        return Split(tuple(raw["train"]), tuple(raw["val"]), tuple(raw["query"]))
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DatasetFormatError(f"{path}: bad split file ({exc})") from None


# ---------------------------------------------------------------- synthetic


def synthetic_vocabulary(n_labels: int) -> LabelVocabulary:
    if n_labels < 0:
        raise ConfigurationError("n_labels must be >= 0")
    if n_labels == 0:
        return LabelVocabulary.unlabeled()
    return LabelVocabulary(tuple(f"L{k}" for k in range(n_labels)))


def generate_graphs(n_graphs: int, n_min: int, n_max: int, edge_prob: float = 0.2,
                    n_labels: int = 4, seed: int = 0) -> list:
    vocab = synthetic_vocabulary(n_labels)
    seeds = np.random.SeedSequence(seed).spawn(n_graphs)
    return [random_graph(n_min, n_max, edge_prob, vocab, s, id=k) for k, s in enumerate(seeds)]


def gen_synthetic(
    n_graphs: int,
    n_min: int,
    n_max: int,
    edge_prob: float = 0.2,
    n_labels: int = 4,
    seed: int = 0,
    algo: str = "brute",
    dataset_path=None,
    gt_path=None,
) -> tuple[list, GroundTruth]:
    """Random connected graphs labelled with exact pairwise GED.

    Writes the dataset JSON and ground-truth CSV when paths are given.
    """
    limit = {"brute": BRUTE_FORCE_MAX_NODES, "astar": ASTAR_SYNTHETIC_MAX_NODES}.get(algo)
    if limit is None:
        raise ConfigurationError(f"unknown algo {algo!r}")
    if n_max > limit:
        raise ConfigurationError(f"n_max={n_max} exceeds the {algo} guard of {limit} nodes")
    if n_graphs < 1:
        raise ConfigurationError("n_graphs must be >= 1")
    graphs = generate_graphs(n_graphs, n_min, n_max, edge_prob, n_labels, seed)
    gt = ground_truth_table(graphs, algo)
    if dataset_path is not None:
        save_dataset(dataset_path, graphs)
    if gt_path is not None:
        save_ground_truth(gt_path, gt)
    return graphs, gt


def graphs_by_id(graphs: Sequence[Graph]) -> dict:
    return {g.id: g for g in graphs}


def lookup(graphs: Sequence[Graph], gid: int) -> Graph:
    for g in graphs:
        if g.id == gid:
            return g
    raise KeyError(f"no graph with id {gid}")


def ensure_ids(graphs: Sequence[Graph], ids, what: str = "ids") -> None:
    known = {g.id for g in graphs}
    missing = [i for i in ids if i not in known]
    if missing:
        raise DatasetFormatError(f"{what} not in dataset: {missing[:10]}{'...' if len(missing) > 10 else ''}")
