import itertools
import logging

import numpy as np
import pytest

from trkcnn.backbone import BackboneConfig, build
from trkcnn.data import SampleSet
from trkcnn.ranking import (
    SubModelBank, aggregate, aggregate_bits, map_labels, rank_inconsistency, relabel, train_bank,
    train_multiclass,
)
from trkcnn.training import Schedule

CFG = BackboneConfig(input_size=8, stages=((4, 1), (4, 1)), dtype="float64")


def toy_sets(n_classes=3, per_class=4, seed=0):
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(n_classes), per_class)
    # class signal is the mean brightness
    images = rng.random((len(labels), 3, 8, 8)) * 0.2 + labels[:, None, None, None] * 0.4
    ids = [f"a{i}" for i in range(len(labels))]
    train = SampleSet(images, labels, ids)
    val = SampleSet(images[::2] + 0.01, labels[::2], [f"v{i}" for i in range(len(labels[::2]))])
    return train, val


def test_relabel_examples():
    assert relabel([0, 1, 2], 1).tolist() == [0, 1, 1]
    assert relabel([0, 1, 2], 2).tolist() == [0, 0, 1]
    assert relabel([0, 0, 0], 1, n_classes=3).tolist() == [0, 0, 0]


def test_relabel_rejects_out_of_range_k():
    with pytest.raises(ValueError):
        relabel([0, 1, 2], 3)
    with pytest.raises(ValueError):
        relabel([0, 1, 2], 0)


def test_relabel_idempotent():
    y = np.random.default_rng(0).integers(0, 5, 50)
    for k in range(1, 5):
        once = relabel(y, k, 5)
        assert np.array_equal(relabel(once, 1, 2), once)


def test_mappings():
    assert map_labels([0, 1, 2], "identity").tolist() == [0, 1, 2]
    assert map_labels([0, 1, 2], "merge_high").tolist() == [0, 1, 1]
    assert map_labels([0, 1, 2], "merge_low").tolist() == [0, 0, 1]
    with pytest.raises(ValueError):
        map_labels([0], "nope")


@pytest.mark.parametrize("bits,P", [((1, 1), 2), ((0, 0), 0), ((0, 1), 1)])
def test_aggregate_examples(bits, P):
    assert aggregate_bits(np.array([bits]))[0] == P


@pytest.mark.parametrize("n", range(2, 7))
def test_aggregate_matches_enumeration(n):
    patterns = np.array(list(itertools.product([0, 1], repeat=n - 1)))
    P = aggregate_bits(patterns)
    for row, p in zip(patterns, P):
        count = 0
        for b in row:
            if b == 1:
                count += 1
        assert p == count and 0 <= p <= n - 1


def _constant_bank(n, value):
    models = []
    for _ in range(n - 1):
        m = build(CFG, np.random.default_rng(0))
        m.head_weight.data[:] = 0
        m.head_bias.data[:] = [0.0, 5.0] if value else [5.0, 0.0]
        models.append(m)
    return SubModelBank(n, models)


@pytest.mark.parametrize("n", [2, 3, 5])
def test_constant_banks(n):
    X = np.random.default_rng(1).random((4, 3, 8, 8))
    assert aggregate(_constant_bank(n, 1), X)[0].tolist() == [n - 1] * 4
    assert aggregate(_constant_bank(n, 0), X)[0].tolist() == [0] * 4


def test_rank_inconsistency():
    bits = np.array([[1, 1], [0, 1], [1, 0], [0, 0]])
    assert rank_inconsistency(bits) == 0.25
    assert rank_inconsistency(np.array([[1], [0]])) == 0.0


def test_bank_validates_shape():
    with pytest.raises(ValueError):
        SubModelBank(3, [build(CFG, np.random.default_rng(0))])


def test_bank_training_is_deterministic_and_order_free(tmp_path):
    train, val = toy_sets()
    sched = Schedule(epochs=2, batch_size=4, learning_rate=1e-2)
    a = train_bank(CFG, 3, train, val, sched, seed=3)
    b = train_bank(CFG, 3, train, val, sched, seed=3, n_jobs=2)
    assert a.content_hash() == b.content_hash()
    for curve in a.curves:
        assert curve.best_val_loss <= curve.final_val_loss
    a.save(tmp_path / "bank")
    assert SubModelBank.load(tmp_path / "bank").content_hash() == a.content_hash()
    assert (tmp_path / "bank" / "curve_sub1.csv").read_text().startswith("epoch,train_loss,val_loss,val_acc")


def test_single_class_subset_warns_but_trains(caplog):
    train, val = toy_sets()
    only0 = train.take(np.flatnonzero(train.labels == 0))
    with caplog.at_level(logging.WARNING):
        train_bank(CFG, 3, only0, val, Schedule(epochs=1, batch_size=4), seed=0)
    assert "single class" in caplog.text


def test_overlapping_validation_rejected():
    train, _ = toy_sets()
    with pytest.raises(ValueError, match="overlap"):
        train_bank(CFG, 3, train, train, Schedule(epochs=1), seed=0)


def test_multiclass_heads():
    train, val = toy_sets()
    sched = Schedule(epochs=1, batch_size=4)
    m, _ = train_multiclass(CFG, train, val, sched, 3, "identity")
    assert m.head_weight.shape[0] == 3
    m, _ = train_multiclass(CFG, train, val, sched, 3, "merge_low")
    assert m.head_weight.shape[0] == 2
