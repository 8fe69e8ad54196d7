import json
import math
from collections import Counter

import numpy as np
import pytest

from alignsim import autodiff as ad
from alignsim.dataio import gen_synthetic
from alignsim.ged import GroundTruth
from alignsim.graph import ConfigurationError, LabelVocabulary
from alignsim.model import ModelConfig, predict
from alignsim.train import (
    Adam,
    Checkpoint,
    MissingGroundTruthError,
    Split,
    TrainConfig,
    TrainingDivergedError,
    load_checkpoint,
    load_config,
    save_checkpoint,
    split_dataset,
    train,
    training_pairs,
    validation_pairs,
)

TINY = dict(L=2, layer_dims=[8, 8], d_prime=4, T=4, head_hidden=8)


@pytest.fixture(scope="module")
def data():
    return gen_synthetic(20, 3, 6, 0.3, 3, seed=4)


def tiny_config(**kw):
    model = ModelConfig(**{**TINY, **kw.pop("model", {})})
    return TrainConfig(**{"epochs": 3, "batch_size": 32, "seed": 1, "model": model, **kw})


def test_split_sizes():
    s = split_dataset(range(10), 0)
    assert (len(s.train), len(s.val), len(s.query)) == (6, 2, 2)
    s = split_dataset(range(7), 0)
    assert (len(s.train), len(s.val), len(s.query)) == (5, 1, 1)
    s = split_dataset(range(150), 0)
    assert (len(s.train), len(s.val), len(s.query)) == (90, 30, 30)


def test_split_properties():
    a, b = split_dataset(range(23), 5), split_dataset(range(23), 5)
    assert a == b
    assert set(a.train) | set(a.val) | set(a.query) == set(range(23))
    assert a.database == sorted(a.train + a.val)
    with pytest.raises(ValueError):
        split_dataset(range(4), 0)
    with pytest.raises(ValueError):
        Split((1, 2), (2,), (3,))


def test_training_pairs():
    split = Split((0, 1, 2, 3), (4,), (5,))
    pairs = training_pairs(split)
    assert len(pairs) == 10 and (2, 2) in pairs
    e1, e2 = training_pairs(split, 1, seed=0), training_pairs(split, 2, seed=0)
    assert e1 != e2 and Counter(e1) == Counter(e2)
    assert e1 == training_pairs(split, 1, seed=0)


def test_training_pairs_missing_truth():
    split = Split((0, 1, 2), (3,), (4,))
    with pytest.raises(MissingGroundTruthError) as info:
        training_pairs(split, ground_truth=GroundTruth([]))
    assert (0, 1) in info.value.pairs


def test_validation_pairs_query_free():
    split = split_dataset(range(20), 3)
    pairs = validation_pairs(split) + training_pairs(split)
    assert not {i for p in pairs for i in p} & set(split.query)
    assert len(validation_pairs(split)) == len(split.val) * len(split.database)


def test_config_json(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"seed": 3, "epochs": 2, "optimizer": {"beta1": 0.8}, "model": {"L": 2, "lambda": 0}}))
    cfg = load_config(path)
    assert cfg.seed == 3 and cfg.optimizer.beta1 == 0.8 and cfg.model.lam == 0 and cfg.model.L == 2
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    for bad in ({"epochs": 0}, {"seed": 1, "momentum": 2}, {"optimizer": {"name": "sgd"}}, {"optimizer": {"rho": 1}}):
        path.write_text(json.dumps(bad))
        with pytest.raises(ConfigurationError):
            load_config(path)


def test_defaults():
    c = TrainConfig()
    assert (c.batch_size, c.learning_rate, c.optimizer.beta1, c.optimizer.beta2, c.optimizer.eps) == (128, 1e-3, 0.9, 0.999, 1e-8)
    assert c.weight_decay == 0 and c.grad_clip is None and c.lr_decay == 1.0


def test_adam_matches_closed_form():
    ps = ad.ParamStore([("w", np.array([1.0, -2.0]))])
    opt = Adam(ps, lr=0.1)
    g = np.array([0.5, -3.0])
    ps["w"].grad = g.copy()
    opt.step()
    # first bias-corrected step is lr * g / (|g| + eps)
    assert np.allclose(ps["w"].data, [1.0 - 0.1, -2.0 + 0.1], atol=1e-7)


def test_train_runs_and_logs(data, tmp_path):
    gs, gt = data
    log = tmp_path / "log.csv"
    res = train(gs, gt, tiny_config(), log_path=log)
    lines = log.read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_mse,val_rho"
    assert len(lines) == 1 + 4
    val = [h.val_mse for h in res.history]
    assert res.best_epoch == int(np.argmin(val))
    assert all(math.isfinite(h.train_loss) for h in res.history)


def test_best_checkpoint_is_argmin(data):
    gs, gt = data
    res = train(gs, gt, tiny_config(epochs=6, learning_rate=0.02))
    val = [h.val_mse for h in res.history]
    assert res.best_epoch == int(np.argmin(val))
    assert res.checkpoint.epoch == res.best_epoch


def test_train_deterministic(data):
    gs, gt = data
    a = train(gs, gt, tiny_config())
    b = train(gs, gt, tiny_config())
    assert a.checkpoint.to_bytes() == b.checkpoint.to_bytes()
    assert a.log_csv() == b.log_csv()


def test_lambda_zero_ablation(data):
    gs, gt = data
    res = train(gs, gt, tiny_config(model={"lam": 0.0}, epochs=1))
    assert res.history[-1].val_mse is not None


def test_missing_truth_for_validation(data):
    gs, gt = data
    keep = [e for e in gt if not (e.g1 == 0 or e.g2 == 0)]
    with pytest.raises(MissingGroundTruthError):
        train(gs, GroundTruth(keep), tiny_config(), split=Split(tuple(range(1, 12)), (0,), tuple(range(12, 20))))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_reports_batch(data):
    gs, gt = data
    cfg = tiny_config(learning_rate=1e300, epochs=3)
    with pytest.raises(TrainingDivergedError) as info:
        train(gs, gt, cfg)
    assert info.value.pairs


def test_checkpoint_roundtrip(data, tmp_path):
    gs, gt = data
    res = train(gs, gt, tiny_config(epochs=1))
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, res.checkpoint)
    back = load_checkpoint(path)
    assert back.to_bytes() == path.read_bytes()
    m1, m2 = res.checkpoint.model(), back.model()
    rng = np.random.default_rng(0)
    for _ in range(20):
        i, j = rng.integers(0, len(gs), 2)
        assert predict(gs[i], gs[j], m1) == predict(gs[i], gs[j], m2)


def test_checkpoint_truncated(data, tmp_path):
    gs, gt = data
    res = train(gs, gt, tiny_config(epochs=1))
    path = tmp_path / "m.ckpt"
    path.write_bytes(res.checkpoint.to_bytes()[:-100])
    with pytest.raises(ad.CheckpointFormatError):
        load_checkpoint(path)
    with pytest.raises(ad.CheckpointFormatError):
        load_checkpoint(tmp_path / "missing.ckpt")


def test_checkpoint_layer_mismatch(tmp_path):
    vocab = LabelVocabulary(("a", "b"))
    from alignsim.model import SimilarityModel

    four = ModelConfig(L=4, layer_dims=[8] * 4, d_prime=4, T=4)
    ckpt = Checkpoint(SimilarityModel(four, vocab).params, four, vocab)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, ckpt)
    three = ModelConfig(L=3, layer_dims=[8] * 3, d_prime=4, T=4)
    with pytest.raises(ad.ShapeError, match=r"parameter enc\.3\."):
        load_checkpoint(path, three)
