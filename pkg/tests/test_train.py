import dataclasses
import math

import numpy as np
import pytest

from cmtboost.battery import tiny_config
from cmtboost.data import (AugmentationSpec, SyntheticSpec, generate_synthetic,
                           preprocess_records, split_dataset)
from cmtboost.model import ConfigError, build_model, profile
from cmtboost.train import (AdamState, DivergenceError, OptimizerError, TrainConfig, adam_step,
                            dataset_loss, history_csv, lr_at, train)


def test_lr_schedule_exact_values():
    assert lr_at(0) == 1e-3
    assert lr_at(19) == 1e-3
    assert lr_at(20) == 8.5e-4
    assert lr_at(40) == 7.225e-4
    assert lr_at(59) == 7.225e-4
    with pytest.raises(ValueError):
        lr_at(-1)


def test_adam_zero_gradient_zero_decay_is_identity(rng):
    p = {"w": rng.standard_normal((3, 2))}
    before = p["w"].copy()
    state = AdamState(weight_decay=0.0)
    for _ in range(3):
        adam_step(p, {"w": np.zeros((3, 2))}, state)
    assert p["w"].tobytes() == before.tobytes()
    assert state.step == 3 and state.m["w"].shape == (3, 2)


def test_weight_decay_only_shrinks_by_exact_factor(rng):
    w = rng.standard_normal(5)
    p = {"w": w.copy()}
    state = AdamState(lr=1e-3, weight_decay=0.04)
    expected = w.copy()
    for _ in range(4):
        adam_step(p, {"w": np.zeros(5)}, state)
        expected = expected * (1 - 1e-3 * 0.04)
    assert p["w"].tobytes() == expected.tobytes()


def test_first_step_moves_by_about_lr():
    for g in (0.3, -2.0, 1e-3):
        p = {"w": np.array([1.0])}
        adam_step(p, {"w": np.array([g])}, AdamState(lr=1e-3, weight_decay=0.0))
        step = 1.0 - p["w"][0]
        assert step == pytest.approx(1e-3 * abs(g) / (abs(g) + 1e-8) * math.copysign(1, g), rel=1e-9)


def test_opposite_gradients_give_opposite_updates():
    p = {"a": np.array([0.0]), "b": np.array([0.0])}
    adam_step(p, {"a": np.array([0.7]), "b": np.array([-0.7])}, AdamState(weight_decay=0.0))
    assert p["a"][0] == -p["b"][0] != 0


def test_nan_gradient_names_parameter_and_changes_nothing():
    p = {"ok": np.ones(2), "bad": np.ones(2)}
    with pytest.raises(OptimizerError, match="bad"):
        adam_step(p, {"ok": np.ones(2), "bad": np.array([1.0, np.nan])}, AdamState())
    assert np.all(p["ok"] == 1)
    with pytest.raises(OptimizerError, match="shape"):
        adam_step(p, {"ok": np.ones(3), "bad": np.ones(2)}, AdamState())


def test_adam_matches_textbook_recurrence(rng):
    w = rng.standard_normal(4)
    p = {"w": w.copy()}
    state = AdamState(lr=0.01, weight_decay=0.1)
    m = v = np.zeros(4)
    ref = w.copy()
    for t in range(1, 6):
        g = rng.standard_normal(4)
        adam_step(p, {"w": g}, state)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref - 0.01 * 0.1 * ref
        ref = ref - 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    np.testing.assert_allclose(p["w"], ref, rtol=1e-12)


@pytest.mark.parametrize("field,value", [("epochs", 0), ("batch_size", 0), ("lr", 0.0),
                                         ("lr_decay", 1.5), ("weight_decay", -1.0)])
def test_train_config_validation(field, value):
    with pytest.raises(ConfigError, match=field):
        dataclasses.replace(TrainConfig(), **{field: value}).validate()


# -- loop -----------------------------------------------------------------

def _tiny_split(count=6, seed=0):
    cfg = tiny_config(seed)
    recs = generate_synthetic(SyntheticSpec(count_per_class=count, size=32, seed=seed))
    recs = preprocess_records(recs, 32, 32, cfg.input_channels)
    return cfg, split_dataset(recs, (0.5, 0.25, 0.25), seed)


def test_initial_loss_is_near_ln2():
    cfg = profile("desk64")
    recs = generate_synthetic(SyntheticSpec(count_per_class=32, size=64))
    loss = dataset_loss(build_model(cfg), preprocess_records(recs, 64, 64))
    assert abs(loss - math.log(2)) <= 0.15


def test_short_run_is_bit_reproducible():
    cfg, split = _tiny_split()
    tc = TrainConfig(epochs=3, batch_size=4, seed=0)
    a = train(build_model(cfg), split, tc)
    b = train(build_model(cfg), split, tc)
    assert a.history_csv() == b.history_csv()
    assert len(a.history) == 3
    assert a.history_csv().splitlines()[0].startswith("epoch,lr,train_loss")


def test_best_state_is_restored_and_callbacks_fire():
    cfg, split = _tiny_split()
    model = build_model(cfg)
    improved, seen = [], []
    res = train(model, split, TrainConfig(epochs=3, batch_size=4, augment=False),
                on_improve=lambda e, s: improved.append(e), on_epoch=lambda e, r, m: seen.append(e))
    assert seen == [0, 1, 2] and improved[0] == 0 and improved[-1] == res.best_epoch
    for name, p in model.named_parameters():
        assert p.data.tobytes() == res.best_state[name].tobytes()


def test_training_reduces_loss_on_tiny_problem():
    cfg, split = _tiny_split(count=8)
    res = train(build_model(cfg), split, TrainConfig(epochs=12, batch_size=4, lr=3e-3,
                                                     augmentation=AugmentationSpec.identity()))
    assert res.history[-1]["train_loss"] < res.history[0]["train_loss"]


def test_divergence_raises_with_last_good_state():
    cfg, split = _tiny_split()
    model = build_model(cfg)
    model.head.fc2_b.data[...] = np.nan
    with pytest.raises(DivergenceError) as info:
        train(model, split, TrainConfig(epochs=2, batch_size=4))
    assert info.value.epoch == 0
    assert set(info.value.last_good) == {n for n, _ in model.named_parameters()}


def test_history_csv_format():
    row = {"epoch": 0, "lr": 8.5e-4, "train_loss": 0.5, "train_acc": 50.0, "val_loss": 0.25,
           "val_acc": 100.0, "val_sen": 100.0, "val_pre": 100.0, "val_f1": 100.0, "val_auc": 1.0}
    line = history_csv([row]).splitlines()[1]
    assert line.startswith("0,0.00085,0.50000000,50.00000000")
