"""Graph similarity learning supervised by exact graph edit distance.

Modules: ``graph`` (types), ``ged`` (exact GED), ``autodiff`` (reverse-mode
tensors), ``model`` (encoder, regularizer, scoring heads), ``train``,
``metrics``, ``dataio`` and ``cli``.
"""
from .ged import GroundTruth, astar_ged, brute_force_ged, ged, similarity_from_ged
from .graph import Graph, LabelVocabulary, Permutation, apply_permutation, random_graph
from .model import ModelConfig, SimilarityModel, predict
from .train import Checkpoint, Split, TrainConfig, load_checkpoint, save_checkpoint, split_dataset, train

__version__ = "0.1.0"
