"""Dataset splitting, pair enumeration, Adam training loop and checkpoints."""
from __future__ import annotations

import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import CheckpointFormatError, ParamStore
from .ged import GroundTruth
from .graph import ConfigurationError, Graph, LabelVocabulary
from .model import ModelConfig, SimilarityModel

log = logging.getLogger(__name__)


class MissingGroundTruthError(KeyError):
    def __init__(self, pairs):
        super().__init__(pairs)
        self.pairs = list(pairs)

    def __str__(self) -> str:
        head = ", ".join(map(str, self.pairs[:10]))
        return f"{len(self.pairs)} pairs lack ground truth: {head}{' ...' if len(self.pairs) > 10 else ''}"


class TrainingDivergedError(FloatingPointError):
    def __init__(self, epoch: int, pairs):
        super().__init__(f"non-finite loss at epoch {epoch} on pairs {list(pairs)[:10]}")
        self.epoch = epoch
        self.pairs = list(pairs)


# ------------------------------------------------------------------- config


@dataclass
class OptimizerConfig:
    name: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def _reject_unknown(cls, raw: dict, where: str):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigurationError(f"unknown {where} key(s): {', '.join(unknown)}")


@dataclass
class TrainConfig:
    seed: int = 0
    epochs: int = 50
    batch_size: int = 128
    learning_rate: float = 1e-3
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    validation_every: int = 1
    weight_decay: float = 0.0
    grad_clip: Optional[float] = None
    lr_decay: float = 1.0  # multiplicative per epoch; 1.0 keeps the rate constant

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigurationError("learning_rate must be > 0")
        if self.validation_every < 1:
            raise ConfigurationError("validation_every must be >= 1")
        if self.optimizer.name != "adam":
            raise ConfigurationError(f"unsupported optimizer {self.optimizer.name!r}")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["model"] = self.model.to_dict()
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        _reject_unknown(cls, raw, "train config")
        raw = dict(raw)
        if "optimizer" in raw:
            _reject_unknown(OptimizerConfig, raw["optimizer"], "optimizer")
            raw["optimizer"] = OptimizerConfig(**raw["optimizer"])
        if "model" in raw:
            raw["model"] = ModelConfig.from_dict(raw["model"])
        return cls(**raw)


def load_config(path) -> TrainConfig:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{path}: config must be a JSON object")
    return TrainConfig.from_dict(raw)


# -------------------------------------------------------------------- split


@dataclass(frozen=True)
class Split:
    train: tuple
    val: tuple
    query: tuple

    def __post_init__(self):
        sets = [set(self.train), set(self.val), set(self.query)]
        if sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2]:
            raise ValueError("split parts overlap")

    @property
    def database(self) -> list:
        return sorted(self.train + self.val)

    def all_ids(self) -> list:
        return sorted(self.train + self.val + self.query)

    def to_dict(self) -> dict:
        return {"train": list(self.train), "val": list(self.val), "query": list(self.query)}


def split_dataset(dataset, seed: int = 0) -> Split:
    """Shuffle and cut 60 / 20 / 20; validation and query sizes round down."""
    ids = sorted(g.id if isinstance(g, Graph) else int(g) for g in dataset)
    if len(ids) < 5:
        raise ValueError(f"need at least 5 graphs to split, got {len(ids)}")
    n = len(ids)
    n_val = n_query = int(math.floor(0.2 * n))
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [ids[k] for k in order]
    n_train = n - n_val - n_query
    return Split(
        tuple(sorted(shuffled[:n_train])),
        tuple(sorted(shuffled[n_train:n_train + n_val])),
        tuple(sorted(shuffled[n_train + n_val:])),
    )


def training_pairs(split: Split, epoch: Optional[int] = None, seed: int = 0,
                   ground_truth: Optional[GroundTruth] = None) -> list:
    """Unordered train x train pairs including self-pairs, reshuffled per epoch."""
    ids = sorted(split.train)
    pairs = [(a, b) for k, a in enumerate(ids) for b in ids[k:]]
    if ground_truth is not None:
        missing = ground_truth.missing(pairs)
        if missing:
            raise MissingGroundTruthError(missing)
    if epoch is not None:
        order = np.random.default_rng([seed, epoch]).permutation(len(pairs))
        pairs = [pairs[k] for k in order]
    return pairs


def validation_pairs(split: Split) -> list:
    return [(v, d) for v in sorted(split.val) for d in split.database]


# --------------------------------------------------------------- optimizer


class Adam:
    def __init__(self, params: ParamStore, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 0.0, grad_clip: Optional[float] = None):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.grad_clip = grad_clip
        self.t = 0
        self.m = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in params.items()}

    def step(self):
        self.t += 1
        grads = {k: t.grad for k, t in self.params.items()}
        if self.weight_decay:
            grads = {k: g + self.weight_decay * self.params[k].data for k, g in grads.items()}
        if self.grad_clip is not None:
            norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            if norm > self.grad_clip:
                grads = {k: g * (self.grad_clip / norm) for k, g in grads.items()}
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k, t in self.params.items():
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            t.data = t.data - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


# -------------------------------------------------------------- checkpoint


@dataclass
class Checkpoint:
    params: ParamStore
    model_config: ModelConfig
    vocabulary: LabelVocabulary
    seed: int = 0
    epoch: int = 0

    def model(self) -> SimilarityModel:
        return SimilarityModel(self.model_config, self.vocabulary, self.params)

    def metadata(self) -> dict:
        return {
            "model_config": self.model_config.to_dict(),
            "vocabulary": {"labeled": self.vocabulary.labeled, "tokens": list(self.vocabulary.tokens)},
            "seed": self.seed,
            "epoch": self.epoch,
        }

    def to_bytes(self) -> bytes:
        return ad.dump_params(self.params, self.metadata())


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    Path(path).write_bytes(ckpt.to_bytes())


def load_checkpoint(path, config: Optional[ModelConfig] = None) -> Checkpoint:
    """Read a checkpoint; shapes are checked against ``config`` (default: the stored one)."""
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointFormatError(f"{path}: {exc}") from None
    params, meta = ad.parse_params(buf)
    try:
        vocab_raw = meta["vocabulary"]
        vocab = (LabelVocabulary(tuple(vocab_raw["tokens"])) if vocab_raw["labeled"]
                 else LabelVocabulary.unlabeled())
        stored = ModelConfig.from_dict(meta["model_config"])
    except (KeyError, TypeError) as exc:
        raise CheckpointFormatError(f"{path}: incomplete metadata ({exc})") from None
    cfg = config or stored
    SimilarityModel(cfg, vocab, params)  # raises ShapeError naming the first bad parameter
    return Checkpoint(params, cfg, vocab, int(meta.get("seed", 0)), int(meta.get("epoch", 0)))


# ------------------------------------------------------------------ training


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_mse: Optional[float] = None
    val_rho: Optional[float] = None


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list
    best_epoch: int
    final_params: ParamStore

    @property
    def initial_train_loss(self) -> float:
        return self.history[0].train_loss

    @property
    def final_train_loss(self) -> float:
        return self.history[-1].train_loss

    def log_csv(self) -> str:
        return history_csv(self.history)


def history_csv(history: Sequence[EpochLog]) -> str:
    def cell(x):
        return "" if x is None else repr(float(x))

    buf = io.StringIO()
    buf.write("epoch,train_loss,val_mse,val_rho\n")
    for h in history:
        buf.write(f"{h.epoch},{cell(h.train_loss)},{cell(h.val_mse)},{cell(h.val_rho)}\n")
    return buf.getvalue()


class _PairData:
    """Cached per-graph features so each batch only assembles its own graphs."""

    def __init__(self, model: SimilarityModel, graphs: Sequence[Graph], truth: GroundTruth):
        self.model = model
        self.graphs = {g.id: g for g in graphs}
        self.features = {g.id: model.features(g) for g in graphs}
        self.truth = truth

    def batch_loss(self, pairs):
        from .model import GraphBatch

        ids = sorted({i for p in pairs for i in p})
        pos = {gid: k for k, gid in enumerate(ids)}
        batch = GraphBatch.build([self.graphs[i] for i in ids], [self.features[i] for i in ids])
        ii = np.array([pos[a] for a, _ in pairs], dtype=np.intp)
        jj = np.array([pos[b] for _, b in pairs], dtype=np.intp)
        targets = np.array([self.truth.similarity(a, b) for a, b in pairs])
        return self.model.loss(batch, ii, jj, targets)


def _validate(model: SimilarityModel, graphs, split: Split, truth: GroundTruth) -> tuple[float, float]:
    from .metrics import Scorer, rank_queries

    pool = [g for g in graphs if g.id in set(split.database)]
    report = rank_queries(sorted(split.val), split.database, Scorer(model, pool).row, truth)
    return report.mse, report.rho


def train(
    graphs: Sequence[Graph],
    ground_truth: GroundTruth,
    config: TrainConfig,
    split: Optional[Split] = None,
    vocab: Optional[LabelVocabulary] = None,
    log_path=None,
) -> TrainResult:
    """Mini-batch Adam on MSE + lambda * AReg; keeps the best-validation parameters.

    Row 0 of the history holds the objective and validation metrics of the
    untrained parameters.
    """
    vocab = vocab or LabelVocabulary.from_graphs(graphs)
    split = split or split_dataset(graphs, config.seed)
    model = SimilarityModel(config.model, vocab, seed=config.seed)
    data = _PairData(model, graphs, ground_truth)
    base_pairs = training_pairs(split, ground_truth=ground_truth)
    missing = ground_truth.missing(validation_pairs(split))
    if missing:
        raise MissingGroundTruthError(missing)
    opt = Adam(model.params, config.learning_rate, config.optimizer.beta1, config.optimizer.beta2,
               config.optimizer.eps, config.weight_decay, config.grad_clip)
    bs = config.batch_size

    def full_objective() -> float:
        total = 0.0
        with ad.no_grad():
            for start in range(0, len(base_pairs), bs):
                chunk = base_pairs[start:start + bs]
                loss, _ = data.batch_loss(chunk)
                total += loss.item() * len(chunk)
        return total / len(base_pairs)

    history: list[EpochLog] = []
    val_mse, val_rho = _validate(model, graphs, split, ground_truth)
    history.append(EpochLog(0, full_objective(), val_mse, val_rho))
    best_mse, best_epoch, best_state = val_mse, 0, model.params.state()
    log.info("epoch 0: loss %.6f val_mse %.6f val_rho %.4f", history[0].train_loss, val_mse, val_rho)

    for epoch in range(1, config.epochs + 1):
        opt.lr = config.learning_rate * config.lr_decay ** (epoch - 1)
        pairs = training_pairs(split, epoch, config.seed)
        losses = []
        for start in range(0, len(pairs), bs):
            chunk = pairs[start:start + bs]
            model.params.zero_grad()
            loss, _ = data.batch_loss(chunk)
            if not np.isfinite(loss.data).all():
                raise TrainingDivergedError(epoch, chunk)
            ad.backward(loss)
            opt.step()
            losses.append(loss.item() * len(chunk))
        entry = EpochLog(epoch, float(np.sum(losses) / len(pairs)))
        if epoch % config.validation_every == 0 or epoch == config.epochs:
            entry.val_mse, entry.val_rho = _validate(model, graphs, split, ground_truth)
            if entry.val_mse < best_mse:
                best_mse, best_epoch, best_state = entry.val_mse, epoch, model.params.state()
        history.append(entry)
        log.info("epoch %d: loss %.6f val_mse %s", epoch, entry.train_loss, entry.val_mse)

    best = model.params.copy()
    best.load_state(best_state)
    ckpt = Checkpoint(best, config.model, vocab, config.seed, best_epoch)
    if log_path is not None:
        Path(log_path).write_text(history_csv(history), encoding="utf-8")
    return TrainResult(ckpt, history, best_epoch, model.params)
