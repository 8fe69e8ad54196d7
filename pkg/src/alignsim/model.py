"""Graph similarity network with alignment regularization.

Pipeline per graph pair:

    GIN encoder (L layers) -> per-layer DeepSets readout -> concatenated
    multi-scale embedding -> {low-rank NTN head, exponential Minkowski head}
    -> alpha * s_ntn + beta * s_p

During training an alignment regularizer compares, for every node, its
cosine similarity to its own graph's readout against its similarity to the
partner graph's readout. It never compares nodes across graphs and is never
evaluated at inference time.

All batched computation runs on the disjoint union of the graphs in a batch;
pairs index into that union.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .graph import ConfigurationError, Graph, LabelVocabulary, featurize

MINKOWSKI_VARIANTS = ("elementwise", "scalar")
SIMILARITIES = {"cosine": ad.cosine_similarity}


@dataclass
class ModelConfig:
    L: int = 4
    layer_dims: Optional[list] = None
    d_prime: int = 16
    T: int = 16
    p: float = 2.0
    lam: float = 0.1
    dist: str = "cosine"
    use_ntn: bool = True
    use_minkowski: bool = True
    use_areg: bool = True
    minkowski_variant: str = "elementwise"
    normalize_gamma: bool = False
    head_hidden: int = 16

    # JSON spells the regularization weight "lambda"
    _json_renames = {"lambda": "lam"}

    def __post_init__(self):
        if self.layer_dims is None:
            self.layer_dims = [64] * self.L
        self.layer_dims = [int(d) for d in self.layer_dims]
        self.validate()

    def validate(self):
        if self.L < 1:
            raise ConfigurationError(f"L must be >= 1, got {self.L}")
        if len(self.layer_dims) != self.L:
            raise ConfigurationError(f"layer_dims has {len(self.layer_dims)} entries for L={self.L}")
        dims = self.layer_dims + [self.d_prime, self.T, self.head_hidden]
        if any(d < 1 for d in dims):
            raise ConfigurationError("all dimensions must be >= 1")
        if self.p < 1:
            raise ConfigurationError(f"Minkowski order p must be >= 1, got {self.p}")
        if self.lam < 0:
            raise ConfigurationError(f"lambda must be >= 0, got {self.lam}")
        if not (self.use_ntn or self.use_minkowski):
            raise ConfigurationError("at least one of use_ntn / use_minkowski must be enabled")
        if self.dist not in SIMILARITIES:
            raise ConfigurationError(f"unknown dist {self.dist!r}; choose from {sorted(SIMILARITIES)}")
        if self.minkowski_variant not in MINKOWSKI_VARIANTS:
            raise ConfigurationError(f"minkowski_variant must be one of {MINKOWSKI_VARIANTS}")

    @property
    def d_ms(self) -> int:
        return sum(self.layer_dims)

    @property
    def areg_active(self) -> bool:
        return self.use_areg and self.lam > 0

    def to_dict(self) -> dict:
        out = asdict(self)
        out["lambda"] = out.pop("lam")
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        kwargs = {}
        for key, value in raw.items():
            name = cls._json_renames.get(key, key)
            if name not in known or key == "lam":
                raise ConfigurationError(f"unknown model config key {key!r}")
            kwargs[name] = value
        if "layer_dims" not in kwargs and "L" in kwargs:
            kwargs["layer_dims"] = [64] * int(kwargs["L"])
        return cls(**kwargs)


@dataclass
class Instrumentation:
    """Operation counters used to verify the training / inference contract."""

    areg_calls: int = 0
    cross_similarity_evals: int = 0
    intra_similarity_evals: int = 0

    def reset(self):
        self.areg_calls = self.cross_similarity_evals = self.intra_similarity_evals = 0


STATS = Instrumentation()


# --------------------------------------------------------------- parameters


def _glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


# Sum aggregation and sum readouts leave Zhat unnormalized (entries in the
# hundreds on 8-node graphs), so Glorot-sized NTN factors put the bilinear term
# deep in the head's saturated region. Shrinking them starts the head near 0.5.
NTN_INIT_SCALE = 0.01


def init_params(config: ModelConfig, in_dim: int, seed: int = 0) -> ParamStore:
    """Glorot-uniform weights (NTN ones scaled by ``NTN_INIT_SCALE``), zero
    biases, xi = 0, alpha = beta = 0.5."""
    rng = np.random.default_rng(seed)
    ps = ParamStore()
    prev = in_dim
    for l, d in enumerate(config.layer_dims):
        ps.add(f"enc.{l}.w1", _glorot(rng, (prev, d), prev, d))
        ps.add(f"enc.{l}.b1", np.zeros(d))
        ps.add(f"enc.{l}.w2", _glorot(rng, (d, d), d, d))
        ps.add(f"enc.{l}.b2", np.zeros(d))
        ps.add(f"enc.{l}.xi", np.zeros(()))
        ps.add(f"readout.{l}.w", _glorot(rng, (d, d), d, d))
        ps.add(f"readout.{l}.b", np.zeros(d))
        prev = d
    dms, dp, T, hid = config.d_ms, config.d_prime, config.T, config.head_hidden
    if config.use_ntn:
        ps.add("ntn.w1", NTN_INIT_SCALE * _glorot(rng, (dms, dp, T), dms, dp))
        ps.add("ntn.w2", NTN_INIT_SCALE * _glorot(rng, (dp, dms, T), dms, dp))
        ps.add("ntn.w3", NTN_INIT_SCALE * _glorot(rng, (T, 2 * dms), 2 * dms, T))
        ps.add("ntn.b", np.zeros(T))
        _init_head(ps, "ntn_head", T, hid, rng)
    if config.use_minkowski:
        width = dms if config.minkowski_variant == "elementwise" else 1
        _init_head(ps, "mink_head", width, hid, rng)
    ps.add("combiner.alpha", np.full((), 0.5))
    ps.add("combiner.beta", np.full((), 0.5))
    return ps


def _init_head(ps: ParamStore, prefix: str, width: int, hidden: int, rng):
    ps.add(f"{prefix}.w1", _glorot(rng, (width, hidden), width, hidden))
    ps.add(f"{prefix}.b1", np.zeros(hidden))
    ps.add(f"{prefix}.w2", _glorot(rng, (hidden, 1), hidden, 1))
    ps.add(f"{prefix}.b2", np.zeros(1))


def expected_shapes(config: ModelConfig, in_dim: int) -> dict:
    return {k: t.shape for k, t in init_params(config, in_dim).items()}


# ------------------------------------------------------------ graph batching


@dataclass
class GraphBatch:
    """Disjoint union of graphs with their node features."""

    ids: list
    x: np.ndarray
    neighbors: sp.csr_matrix  # symmetric, total x total
    pool: sp.csr_matrix  # n_graphs x total, sums nodes into their graph
    offsets: np.ndarray

    @property
    def sizes(self) -> np.ndarray:
        return np.diff(self.offsets)

    def __len__(self) -> int:
        return len(self.ids)

    def position(self) -> dict:
        return {gid: k for k, gid in enumerate(self.ids)}

    @classmethod
    def build(cls, graphs: Sequence[Graph], features: Sequence[np.ndarray]) -> "GraphBatch":
        sizes = np.array([g.n for g in graphs], dtype=np.intp)
        offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.intp)
        total = int(offsets[-1])
        rows, cols = [], []
        for g, off in zip(graphs, offsets[:-1]):
            e = g.edges
            if len(e):
                rows.append(e[:, 0] + off)
                cols.append(e[:, 1] + off)
        if rows:
            r = np.concatenate(rows)
            c = np.concatenate(cols)
            rr, cc = np.concatenate([r, c]), np.concatenate([c, r])
        else:
            rr = cc = np.zeros(0, dtype=np.intp)
        neighbors = sp.csr_matrix((np.ones(len(rr)), (rr, cc)), shape=(total, total))
        seg = np.repeat(np.arange(len(graphs)), sizes)
        pool = sp.csr_matrix((np.ones(total), (seg, np.arange(total))), shape=(len(graphs), total))
        x = np.concatenate(list(features), axis=0) if len(features) else np.zeros((0, 1))
        return cls([g.id for g in graphs], x, neighbors, pool, offsets)


def neighbor_matrix(n: int, edges) -> sp.csr_matrix:
    edges = np.asarray(edges, dtype=np.intp).reshape(-1, 2)
    r = np.concatenate([edges[:, 0], edges[:, 1]])
    c = np.concatenate([edges[:, 1], edges[:, 0]])
    return sp.csr_matrix((np.ones(len(r)), (r, c)), shape=(n, n))


# ------------------------------------------------------------------ encoder


def _affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return ad.add(ad.matmul(x, w), b)


def gin_layer(h_prev: Tensor, neighbors, params: ParamStore, layer: int) -> Tensor:
    """``MLP((1 + xi) h_k + sum_{j in N(k)} h_j)`` for every node ``k``.

    ``neighbors`` is either a sparse neighbour-sum matrix or an (m, 2) edge list.
    """
    h_prev = ad.as_tensor(h_prev)
    if not sp.issparse(neighbors):
        neighbors = neighbor_matrix(h_prev.shape[0], neighbors)
    p = f"enc.{layer}"
    w1 = params[f"{p}.w1"]
    if h_prev.ndim != 2 or h_prev.shape[1] != w1.shape[0]:
        raise ad.ShapeError(f"gin_layer {layer}", h_prev.shape, w1.shape)
    agg = ad.spmm(neighbors, h_prev)
    mixed = ad.add(ad.scale(h_prev, ad.add_const(params[f"{p}.xi"], 1.0)), agg)
    hidden = ad.relu(_affine(mixed, w1, params[f"{p}.b1"]))
    return _affine(hidden, params[f"{p}.w2"], params[f"{p}.b2"])


def readout(h: Tensor, pool, params: ParamStore, layer: int) -> Tensor:
    """One-layer DeepSets: ``relu(W sum_k h_k + b)`` per graph."""
    pooled = ad.spmm(pool, h)
    return ad.relu(_affine(pooled, params[f"readout.{layer}.w"], params[f"readout.{layer}.b"]))


@dataclass
class Encoding:
    """Node states ``H[l]`` (nodes x d_l), graph readouts ``Z[l]`` and the concatenation."""

    H: list
    Z: list
    Zhat: Tensor
    batch: Optional[GraphBatch] = field(default=None, repr=False)


def encode_batch(batch: GraphBatch, params: ParamStore, config: ModelConfig) -> Encoding:
    in_dim = params["enc.0.w1"].shape[0]
    if batch.x.shape[1] != in_dim:
        raise ad.ShapeError("encode", batch.x.shape, (None, in_dim))
    h = Tensor(batch.x)
    Hs, Zs = [], []
    for l in range(config.L):
        h = gin_layer(h, batch.neighbors, params, l)
        Hs.append(h)
        Zs.append(readout(h, batch.pool, params, l))
    return Encoding(Hs, Zs, ad.concat(Zs, axis=-1), batch)


@dataclass
class GraphEncoding:
    H: list
    Z: list
    Zhat: Tensor


def encode(g: Graph, features: np.ndarray, params: ParamStore, config: ModelConfig) -> GraphEncoding:
    """Single-graph encoding: node states per layer, readout vectors, multi-scale vector."""
    enc = encode_batch(GraphBatch.build([g], [features]), params, config)
    Z = [ad.reshape(z, (z.shape[1],)) for z in enc.Z]
    return GraphEncoding(enc.H, Z, ad.reshape(enc.Zhat, (enc.Zhat.shape[1],)))


# ---------------------------------------------------------------- AReg loss


def _areg_from_rows(Hs, Zs, node_idx, own, other, seg_matrix, n_pairs, dist, n_layers) -> Tensor:
    const = Tensor(np.array([[1.0], [-1.0]]))
    total = None
    for H, Z in zip(Hs, Zs):
        nodes = ad.gather(H, node_idx)
        intra = dist(nodes, ad.gather(Z, own))
        cross = dist(nodes, ad.gather(Z, other))
        STATS.intra_similarity_evals += len(node_idx)
        STATS.cross_similarity_evals += len(node_idx)
        gam = ad.reshape(ad.spmm(seg_matrix, ad.abs(ad.sub(intra, cross))), (n_pairs, 2))
        layer_term = ad.add(ad.sum(gam, axis=1), ad.reshape(ad.abs(ad.matmul(gam, const)), (n_pairs,)))
        total = layer_term if total is None else ad.add(total, layer_term)
    return ad.mul_const(total, 1.0 / n_layers)


def areg_batch(enc: Encoding, ii, jj, config: ModelConfig) -> Tensor:
    """Per-pair alignment regularizer for pairs ``(ii[b], jj[b])`` of batch positions."""
    STATS.areg_calls += 1
    batch = enc.batch
    off = batch.offsets
    node_idx, own, other, seg, weight = [], [], [], [], []
    for b, (i, j) in enumerate(zip(ii, jj)):
        for side, (a, c) in enumerate(((i, j), (j, i))):
            n = off[a + 1] - off[a]
            node_idx.append(np.arange(off[a], off[a + 1]))
            own.append(np.full(n, a))
            other.append(np.full(n, c))
            seg.append(np.full(n, 2 * b + side))
            weight.append(np.full(n, 1.0 / n if config.normalize_gamma else 1.0))
    node_idx = np.concatenate(node_idx)
    seg = np.concatenate(seg)
    seg_matrix = sp.csr_matrix(
        (np.concatenate(weight), (seg, np.arange(len(seg)))), shape=(2 * len(ii), len(seg))
    )
    return _areg_from_rows(
        enc.H, enc.Z, node_idx, np.concatenate(own), np.concatenate(other),
        seg_matrix, len(ii), SIMILARITIES[config.dist], config.L,
    )


def areg_loss(enc_i: GraphEncoding, enc_j: GraphEncoding, dist: str = "cosine", normalize: bool = False) -> Tensor:
    """Alignment regularizer of one pair from two single-graph encodings."""
    if len(enc_i.H) != len(enc_j.H):
        raise ConfigurationError(f"layer count mismatch: {len(enc_i.H)} vs {len(enc_j.H)}")
    STATS.areg_calls += 1
    L = len(enc_i.H)
    Ni, Nj = enc_i.H[0].shape[0], enc_j.H[0].shape[0]
    Hs = [ad.concat([hi, hj], axis=0) for hi, hj in zip(enc_i.H, enc_j.H)]
    Zs = [ad.concat([ad.reshape(zi, (1, -1)), ad.reshape(zj, (1, -1))], axis=0) for zi, zj in zip(enc_i.Z, enc_j.Z)]
    node_idx = np.arange(Ni + Nj)
    own = np.r_[np.zeros(Ni, int), np.ones(Nj, int)]
    other = 1 - own
    w = np.r_[np.full(Ni, 1.0 / Ni if normalize else 1.0), np.full(Nj, 1.0 / Nj if normalize else 1.0)]
    seg_matrix = sp.csr_matrix((w, (own, node_idx)), shape=(2, Ni + Nj))
    out = _areg_from_rows(Hs, Zs, node_idx, own, other, seg_matrix, 1, SIMILARITIES[dist], L)
    return ad.reshape(out, ())


# ------------------------------------------------------------ discriminators


def _head(x: Tensor, params: ParamStore, prefix: str) -> Tensor:
    hidden = ad.relu(_affine(x, params[f"{prefix}.w1"], params[f"{prefix}.b1"]))
    out = ad.sigmoid(_affine(hidden, params[f"{prefix}.w2"], params[f"{prefix}.b2"]))
    return ad.reshape(out, (x.shape[0],))


def ntn_scores(zi: Tensor, zj: Tensor, params: ParamStore) -> Tensor:
    """Low-rank NTN: ``v_t = (z_i W1^t)(W2^t z_j)``, then head(v + W3 [z_i; z_j] + b)."""
    if zi.shape != zj.shape:
        raise ad.ShapeError("ntn", zi.shape, zj.shape)
    w1, w2 = params["ntn.w1"], params["ntn.w2"]
    dms, dp, T = w1.shape
    if zi.shape[1] != dms:
        raise ad.ShapeError("ntn", zi.shape, w1.shape)
    B = zi.shape[0]
    left = ad.matmul(zi, ad.reshape(w1, (dms, dp * T)))
    right = ad.matmul(zj, ad.reshape(ad.transpose(w2, (1, 0, 2)), (dms, dp * T)))
    bilinear = ad.sum(ad.reshape(ad.mul(left, right), (B, dp, T)), axis=1)
    linear = ad.matmul(ad.concat([zi, zj], axis=-1), ad.transpose(params["ntn.w3"]))
    return _head(ad.add(ad.add(bilinear, linear), params["ntn.b"]), params, "ntn_head")


def minkowski_features(zi: Tensor, zj: Tensor, p: float, variant: str) -> Tensor:
    if p < 1:
        raise ConfigurationError(f"Minkowski order p must be >= 1, got {p}")
    if zi.shape != zj.shape:
        raise ad.ShapeError("minkowski", zi.shape, zj.shape)
    diff = ad.sub(zi, zj)
    if variant == "elementwise":
        return ad.exp(ad.neg(ad.pow(ad.abs(diff), p)))
    if variant == "scalar":
        return ad.reshape(ad.exp(ad.neg(ad.pnorm(diff, p))), (zi.shape[0], 1))
    raise ConfigurationError(f"unknown Minkowski variant {variant!r}")


def minkowski_scores(zi: Tensor, zj: Tensor, params: ParamStore, p: float, variant: str = "elementwise") -> Tensor:
    return _head(minkowski_features(zi, zj, p, variant), params, "mink_head")


def combine(s_ntn: Optional[Tensor], s_p: Optional[Tensor], params: ParamStore) -> Tensor:
    if s_ntn is None and s_p is None:
        raise ConfigurationError("both discriminators disabled")
    parts = []
    if s_ntn is not None:
        parts.append(ad.scale(s_ntn, params["combiner.alpha"]))
    if s_p is not None:
        parts.append(ad.scale(s_p, params["combiner.beta"]))
    return parts[0] if len(parts) == 1 else ad.add(parts[0], parts[1])


def score_pairs(enc: Encoding, ii, jj, params: ParamStore, config: ModelConfig) -> Tensor:
    zi = ad.gather(enc.Zhat, ii)
    zj = ad.gather(enc.Zhat, jj)
    s_ntn = ntn_scores(zi, zj, params) if config.use_ntn else None
    s_p = minkowski_scores(zi, zj, params, config.p, config.minkowski_variant) if config.use_minkowski else None
    return combine(s_ntn, s_p, params)


# ------------------------------------------------------- single-pair helpers


def _as_row(z) -> Tensor:
    z = ad.as_tensor(z)
    return ad.reshape(z, (1, z.shape[-1])) if z.ndim == 1 else z


def ntn_score(z_i, z_j, params: ParamStore) -> Tensor:
    return ad.reshape(ntn_scores(_as_row(z_i), _as_row(z_j), params), ())


def minkowski_score(z_i, z_j, params: ParamStore, p: float = 2.0, variant: str = "elementwise") -> Tensor:
    return ad.reshape(minkowski_scores(_as_row(z_i), _as_row(z_j), params, p, variant), ())


def combined_score(s_ntn, s_p, params: ParamStore, use_ntn: bool = True, use_minkowski: bool = True) -> Tensor:
    """``alpha * s_ntn + beta * s_p`` with disabled terms dropped."""
    if not (use_ntn or use_minkowski):
        raise ConfigurationError("both discriminators disabled")
    return combine(ad.as_tensor(s_ntn) if use_ntn else None, ad.as_tensor(s_p) if use_minkowski else None, params)


def pair_loss(pred, target: float, areg, lam: float) -> Tensor:
    """``(pred - target)^2 + lam * areg`` for a single pair."""
    err = ad.add_const(ad.as_tensor(pred), -float(target))
    loss = ad.mul(err, err)
    if lam:
        loss = ad.add(loss, ad.mul_const(ad.as_tensor(areg), lam))
    return loss


# ------------------------------------------------------------------- model


class SimilarityModel:
    """Parameters + config + label vocabulary, with batched training and inference."""

    def __init__(self, config: ModelConfig, vocab: LabelVocabulary, params: Optional[ParamStore] = None, seed: int = 0):
        self.config = config
        self.vocab = vocab
        self.params = params if params is not None else init_params(config, vocab.size, seed)
        self.check_shapes()

    def check_shapes(self):
        want = expected_shapes(self.config, self.vocab.size)
        have = {k: t.shape for k, t in self.params.items()}
        for name in sorted(set(want) | set(have), key=_natural_key):
            if want.get(name) != have.get(name):
                raise ad.ShapeError(f"parameter {name}", have.get(name), want.get(name))

    def features(self, g: Graph) -> np.ndarray:
        return featurize(g, self.vocab)

    def batch(self, graphs: Sequence[Graph]) -> GraphBatch:
        return GraphBatch.build(graphs, [self.features(g) for g in graphs])

    def encode_batch(self, batch: GraphBatch) -> Encoding:
        return encode_batch(batch, self.params, self.config)

    def encode(self, g: Graph) -> GraphEncoding:
        return encode(g, self.features(g), self.params, self.config)

    def loss(self, batch: GraphBatch, ii, jj, targets) -> tuple[Tensor, dict]:
        """Mean squared error over the pairs plus lambda times the mean AReg term."""
        enc = self.encode_batch(batch)
        pred = score_pairs(enc, ii, jj, self.params, self.config)
        loss = ad.mse(pred, np.asarray(targets, dtype=np.float64))
        parts = {"mse": loss.item(), "areg": 0.0}
        if self.config.areg_active:
            areg = ad.mean(areg_batch(enc, ii, jj, self.config))
            parts["areg"] = areg.item()
            loss = ad.add(loss, ad.mul_const(areg, self.config.lam))
        return loss, parts

    def score(self, graphs: Sequence[Graph], pairs: Sequence[tuple[int, int]], chunk: int = 4096) -> np.ndarray:
        """Inference scores for ``pairs`` of graph ids, all drawn from ``graphs``."""
        pos = {g.id: k for k, g in enumerate(graphs)}
        ii = np.array([pos[a] for a, _ in pairs], dtype=np.intp)
        jj = np.array([pos[b] for _, b in pairs], dtype=np.intp)
        return self.score_positions(graphs, ii, jj, chunk)

    def score_positions(self, graphs: Sequence[Graph], ii, jj, chunk: int = 4096) -> np.ndarray:
        batch = self.batch(graphs)
        out = np.empty(len(ii))
        with ad.no_grad():
            enc = self.encode_batch(batch)
            for start in range(0, len(ii), chunk):
                sl = slice(start, start + chunk)
                out[sl] = score_pairs(enc, ii[sl], jj[sl], self.params, self.config).data
        return out

    def embeddings(self, graphs: Sequence[Graph]) -> np.ndarray:
        with ad.no_grad():
            return self.encode_batch(self.batch(graphs)).Zhat.data.copy()

    def node_embeddings(self, g: Graph, layer: int = -1) -> np.ndarray:
        with ad.no_grad():
            return self.encode(g).H[layer].data.copy()


def predict(g_i: Graph, g_j: Graph, model: SimilarityModel) -> float:
    """Similarity of one pair from graph-level embeddings only."""
    return float(model.score_positions([g_i, g_j], np.array([0]), np.array([1]))[0])


def _natural_key(name: str):
    return [int(t) if t.isdigit() else t for t in name.split(".")]
