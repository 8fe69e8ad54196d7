"""Top-k search, node alignment heatmaps and graph embeddings.

Trains a small model, then uses it the way a search service would: rank a
database for one query graph, look at the node-to-node cosine heatmap for
the best hit, and check that a renumbered copy of the query scores the
same as the query itself.

    python demos/03_query_and_inspect.py
"""
import numpy as np

from alignsim.dataio import gen_synthetic, lookup
from alignsim.graph import Permutation, apply_permutation
from alignsim.metrics import Scorer, export_embeddings, export_heatmap
from alignsim.model import predict
from alignsim.train import TrainConfig, split_dataset, train

graphs, truth = gen_synthetic(40, 4, 7, edge_prob=0.25, n_labels=3, seed=5)
config = TrainConfig(seed=5, epochs=40, learning_rate=3e-3)
split = split_dataset(graphs, config.seed)
model = train(graphs, truth, config, split).checkpoint.model()

query = split.query[0]
scorer = Scorer(model, graphs)
print(f"top 5 for query graph {query}:")
for gid, score in scorer.top(query, split.database, 5):
    print(f"  graph {gid:3d}  predicted {score:.4f}  true {truth.similarity(query, gid):.4f}")

g = lookup(graphs, query)
copy = apply_permutation(g, Permutation.random(g.n, np.random.default_rng(0)))
print(f"query vs itself {predict(g, g, model):.12f}, vs renumbered copy {predict(g, copy, model):.12f}")

best = scorer.top(query, split.database, 1)[0][0]
np.set_printoptions(precision=2, suppress=True)
print(f"node cosine heatmap, query {query} vs graph {best}:")
print(export_heatmap(model, g, lookup(graphs, best)))

ids, emb = export_embeddings(model, graphs)
print(f"embeddings: {emb.shape[0]} graphs x {emb.shape[1]} dims")
