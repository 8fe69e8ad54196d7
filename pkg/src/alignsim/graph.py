"""Graph representation, node permutations, featurization and random graphs.

Graphs are small, undirected, unweighted and optionally node-labelled. Every
graph keeps a dense boolean adjacency matrix (used by the exact GED solvers)
and an upper-triangular edge list (used for message passing).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Optional, Sequence

import numpy as np


class _Reserved:
    """Sentinel label that can never collide with a user token."""

    __slots__ = ("name",)

    def __init__(self, name: str):
        self.name = name

    def __repr__(self) -> str:
        return f"<{self.name}>"


NULL_LABEL = _Reserved("null")
"""Label carried by padding nodes."""

NO_LABEL = _Reserved("unlabeled")
"""Label given to real nodes of an unlabeled graph when it is padded."""


class GraphSizeError(ValueError):
    pass


class UnknownLabelError(KeyError):
    def __init__(self, token):
        super().__init__(token)
        self.token = token

    def __str__(self) -> str:
        return f"unknown label token {self.token!r}"


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Graph:
    id: int
    adjacency: np.ndarray
    labels: Optional[tuple] = None

    def __post_init__(self):
        adj = np.array(self.adjacency, dtype=bool, copy=True)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise GraphSizeError(f"adjacency must be square, got shape {adj.shape}")
        adj.flags.writeable = False
        object.__setattr__(self, "adjacency", adj)
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(self.labels))

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[Sequence[int]], labels=None, id: int = 0) -> "Graph":
        adj = np.zeros((n, n), dtype=bool)
        for u, v in edges:
            adj[u, v] = adj[v, u] = True
        return cls(id=id, adjacency=adj, labels=labels)

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def labeled(self) -> bool:
        return self.labels is not None

    @cached_property
    def edges(self) -> np.ndarray:
        """Edge list as an (m, 2) int array with u < v, sorted."""
        u, v = np.nonzero(np.triu(self.adjacency, k=1))
        return np.stack([u, v], axis=1).astype(np.int64)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def with_id(self, new_id: int) -> "Graph":
        return Graph(id=new_id, adjacency=self.adjacency, labels=self.labels)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            self.id == other.id
            and self.adjacency.shape == other.adjacency.shape
            and bool(np.array_equal(self.adjacency, other.adjacency))
            and self.labels == other.labels
        )

    def __hash__(self) -> int:
        return hash((self.id, self.adjacency.tobytes(), self.labels))

    def __repr__(self) -> str:
        return f"Graph(id={self.id}, n={self.n}, m={self.num_edges}, labeled={self.labeled})"


@dataclass(frozen=True)
class Permutation:
    """Node relabelling ``i -> mapping[i]``."""

    mapping: tuple

    def __post_init__(self):
        m = tuple(int(x) for x in self.mapping)
        if sorted(m) != list(range(len(m))):
            raise ValueError(f"not a bijection on [0, {len(m)}): {m}")
        object.__setattr__(self, "mapping", m)

    def __len__(self) -> int:
        return len(self.mapping)

    def __call__(self, i: int) -> int:
        return self.mapping[i]

    def inverse(self) -> "Permutation":
        inv = [0] * len(self.mapping)
        for i, p in enumerate(self.mapping):
            inv[p] = i
        return Permutation(tuple(inv))

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        return cls(tuple(range(n)))

    @classmethod
    def random(cls, n: int, rng: np.random.Generator) -> "Permutation":
        return cls(tuple(rng.permutation(n).tolist()))


@dataclass(frozen=True)
class LabelVocabulary:
    tokens: tuple = ()
    labeled: bool = True

    def __post_init__(self):
        toks = tuple(self.tokens)
        if len(set(toks)) != len(toks):
            raise ConfigurationError("vocabulary tokens must be unique")
        if not self.labeled and toks:
            raise ConfigurationError("an unlabeled vocabulary carries no tokens")
        object.__setattr__(self, "tokens", toks)

    @classmethod
    def unlabeled(cls) -> "LabelVocabulary":
        return cls((), labeled=False)

    @classmethod
    def from_graphs(cls, graphs: Iterable[Graph]) -> "LabelVocabulary":
        graphs = list(graphs)
        if not graphs or not graphs[0].labeled:
            return cls.unlabeled()
        seen = set()
        for g in graphs:
            seen.update(g.labels)
        return cls(tuple(sorted(seen, key=str)))

    @property
    def size(self) -> int:
        return len(self.tokens) if self.labeled else 1

    def index(self, token) -> int:
        try:
            return self._lookup[token]
        except KeyError:
            raise UnknownLabelError(token) from None

    @cached_property
    def _lookup(self) -> dict:
        return {t: i for i, t in enumerate(self.tokens)}


def validate_graph(g: Graph) -> list[str]:
    """Return every invariant violation of ``g``; an empty list means valid."""
    problems = []
    adj = g.adjacency
    n = adj.shape[0]
    if n < 1:
        problems.append("graph has no nodes")
    for i in range(n):
        if adj[i, i]:
            problems.append(f"self-loop at {i}")
    rows, cols = np.nonzero(adj != adj.T)
    for i, j in zip(rows.tolist(), cols.tolist()):
        if i < j:
            problems.append(f"asymmetric adjacency at ({i}, {j})")
    if g.labels is not None and len(g.labels) != n:
        problems.append(f"label length {len(g.labels)} != {n}")
    return problems


def apply_permutation(g: Graph, p: Permutation) -> Graph:
    """Move node ``i`` of ``g`` to position ``p(i)``."""
    if len(p) != g.n:
        raise GraphSizeError(f"permutation of length {len(p)} applied to graph with {g.n} nodes")
    perm = np.asarray(p.mapping)
    inv = np.asarray(p.inverse().mapping)
    # new[p(i), p(j)] = old[i, j]  <=>  new[a, b] = old[inv a, inv b]
    adj = g.adjacency[np.ix_(inv, inv)]
    labels = None
    if g.labels is not None:
        new = [None] * g.n
        for i, lab in enumerate(g.labels):
            new[perm[i]] = lab
        labels = tuple(new)
    return Graph(id=g.id, adjacency=adj, labels=labels)


def featurize(g: Graph, vocab: LabelVocabulary) -> np.ndarray:
    """One-hot node features (N x |vocab|), or an all-ones column if unlabeled."""
    if not vocab.labeled or g.labels is None:
        if vocab.labeled and g.labels is None:
            raise ConfigurationError(f"graph {g.id} is unlabeled but vocabulary is labeled")
        if g.labels is not None:
            raise ConfigurationError(f"graph {g.id} is labeled but vocabulary is unlabeled")
        return np.ones((g.n, 1))
    x = np.zeros((g.n, vocab.size))
    for k, tok in enumerate(g.labels):
        x[k, vocab.index(tok)] = 1.0
    return x


def pad_to(g: Graph, target_n: int) -> Graph:
    """Append isolated ``NULL_LABEL`` nodes until ``g`` has ``target_n`` nodes."""
    if target_n < g.n:
        raise GraphSizeError(f"cannot pad graph with {g.n} nodes down to {target_n}")
    if target_n == g.n:
        return g
    adj = np.zeros((target_n, target_n), dtype=bool)
    adj[: g.n, : g.n] = g.adjacency
    real = g.labels if g.labels is not None else (NO_LABEL,) * g.n
    return Graph(id=g.id, adjacency=adj, labels=tuple(real) + (NULL_LABEL,) * (target_n - g.n))


def random_graph(
    n_min: int,
    n_max: int,
    edge_prob: float,
    vocab: Optional[LabelVocabulary],
    seed,
    id: int = 0,
) -> Graph:
    """Connected random graph: a random spanning tree plus G(n, p) extra edges.

    ``vocab=None`` or an unlabeled vocabulary yields an unlabeled graph.
    """
    if not 1 <= n_min <= n_max:
        raise ConfigurationError(f"need 1 <= n_min <= n_max, got {n_min}, {n_max}")
    if not 0.0 <= edge_prob <= 1.0:
        raise ConfigurationError(f"edge_prob must be in [0, 1], got {edge_prob}")
    if vocab is not None and vocab.labeled and vocab.size == 0:
        raise ConfigurationError("empty label vocabulary")
    rng = np.random.default_rng(seed)
    n = int(rng.integers(n_min, n_max + 1))
    adj = np.zeros((n, n), dtype=bool)
    order = rng.permutation(n)
    for k in range(1, n):
        parent = order[rng.integers(0, k)]
        adj[order[k], parent] = adj[parent, order[k]] = True
    iu, ju = np.triu_indices(n, k=1)
    extra = rng.random(len(iu)) < edge_prob
    adj[iu[extra], ju[extra]] = True
    adj[ju[extra], iu[extra]] = True
    labels = None
    if vocab is not None and vocab.labeled:
        picks = rng.integers(0, vocab.size, size=n)
        labels = tuple(vocab.tokens[i] for i in picks)
    return Graph(id=id, adjacency=adj, labels=labels)
