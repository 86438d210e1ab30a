import numpy as np
import pytest

from trkcnn.autograd import Adam
from trkcnn.backbone import Backbone, BackboneConfig, build, forward, predict, transfer_weights
from trkcnn.losses import classification_loss


def small(**kw):
    base = dict(input_size=16, stages=((4, 1), (6, 1)), dtype="float64")
    base.update(kw)
    return BackboneConfig(**base)


def randomize_bn(model, rng):
    for st in model.bn.values():
        st.running_mean = rng.normal(0, 0.3, st.running_mean.shape)
        st.running_var = rng.uniform(0.5, 2.0, st.running_var.shape)
    for name, p in model.params.items():
        if name.endswith("bias") or name.endswith("beta"):
            p.data = rng.normal(0, 0.2, p.shape)


def test_three_pools_on_64_gives_8x8():
    cfg = BackboneConfig(input_size=64, stages=((4, 1), (4, 1), (4, 1)))
    model = build(cfg, np.random.default_rng(0))
    trace = forward(model, np.zeros((1, 3, 64, 64)))
    assert trace.activations.shape == (1, 4, 8, 8)


def test_full_resolution_shape_arithmetic():
    cfg = BackboneConfig(input_size=512, stages=((64, 1), (128, 1), (512, 1), (1024, 1)))
    assert cfg.feature_size == 32 and cfg.n_filters == 1024


def test_invalid_pool_count_rejected():
    with pytest.raises(ValueError, match="divisible"):
        BackboneConfig(input_size=20, stages=((4, 1),) * 3)


def test_gap_softmax_rejects_fc_layers():
    with pytest.raises(ValueError):
        BackboneConfig(head="gap_softmax", fc_widths=(8,))


def test_same_seed_same_parameters():
    a = build(small(), np.random.default_rng(5)).state_dict()
    b = build(small(), np.random.default_rng(5)).state_dict()
    assert all(np.array_equal(a[k], b[k]) for k in a)


def test_init_is_he_with_zero_biases():
    model = build(small(batch_norm=False), np.random.default_rng(0))
    assert not np.any(model.params["stage0.conv0.bias"].data)
    assert not np.any(model.head_bias.data)


def test_probabilities_sum_to_one_and_logits_are_head_of_features():
    model = build(small(), np.random.default_rng(1))
    randomize_bn(model, np.random.default_rng(2))
    x = np.random.default_rng(3).random((5, 3, 16, 16))
    t = forward(model, x)
    assert np.allclose(t.probabilities.data.sum(axis=1), 1.0, atol=1e-12)
    recomputed = t.features.data @ model.head_weight.data.T + model.head_bias.data
    assert np.allclose(recomputed, t.logits.data, atol=1e-9)
    assert t.features.shape[1] == model.head_weight.shape[1]


def test_duplicate_image_gives_identical_trace():
    model = build(small(), np.random.default_rng(1))
    x = np.random.default_rng(4).random((1, 3, 16, 16))
    t = forward(model, np.concatenate([x, x]))
    assert np.array_equal(t.activations.data[0], t.activations.data[1])
    assert np.array_equal(t.logits.data[0], t.logits.data[1])


def test_shape_mismatch_rejected():
    model = build(small(), np.random.default_rng(1))
    with pytest.raises(ValueError, match="expected input"):
        forward(model, np.zeros((1, 4, 16, 16)))


def _fixed_head(model, logits):
    # zero the trunk contribution so the logits are the bias alone
    model.head_weight.data[:] = 0
    model.head_bias.data[:] = np.log(logits)


@pytest.mark.parametrize("probs,expected", [([0.9, 0.1], 0), ([0.5, 0.5], 0), ([0.2, 0.5, 0.3], 1)])
def test_predict_argmax_with_low_index_ties(probs, expected):
    model = build(small(classes=len(probs)), np.random.default_rng(0))
    _fixed_head(model, np.array(probs))
    assert predict(model, np.zeros((1, 3, 16, 16)))[0] == expected


@pytest.mark.parametrize("bn", [True, False])
def test_transfer_identity_with_zero_roi_channel(bn):
    rng = np.random.default_rng(7)
    src = build(small(batch_norm=bn), rng)
    randomize_bn(src, rng)
    tgt = transfer_weights(src, build(small(batch_norm=bn, input_channels=4), rng))
    x = rng.random((6, 3, 16, 16))
    x4 = np.concatenate([x, np.zeros((6, 1, 16, 16))], axis=1)
    a, b = forward(src, x), forward(tgt, x4)
    assert np.max(np.abs(a.logits.data - b.logits.data)) < 1e-9
    assert not np.any(tgt.params["stage0.conv0.weight"].data[:, 3])


def test_transfer_to_fc_head_keeps_trunk():
    rng = np.random.default_rng(8)
    src = build(small(), rng)
    randomize_bn(src, rng)
    tgt = transfer_weights(src, build(small(input_channels=4, head="gap_fc_softmax", fc_widths=(5,)), rng))
    x = rng.random((3, 3, 16, 16))
    x4 = np.concatenate([x, np.zeros((3, 1, 16, 16))], axis=1)
    assert np.max(np.abs(forward(src, x).activations.data - forward(tgt, x4).activations.data)) < 1e-9


def test_transfer_then_training_step_diverges():
    rng = np.random.default_rng(9)
    src = build(small(), rng)
    tgt = transfer_weights(src, build(small(input_channels=4), rng))
    opt = Adam(tgt.parameters(), lr=1e-2)
    x4 = rng.random((4, 4, 16, 16))
    opt.zero_grad()
    classification_loss(forward(tgt, x4, training=True).logits, [0, 1, 0, 1]).backward()
    opt.step()
    assert not np.allclose(tgt.params["stage1.conv0.weight"].data, src.params["stage1.conv0.weight"].data)


def test_transfer_rejects_mismatched_stages():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError, match="trunks differ"):
        transfer_weights(build(small(), rng), build(small(input_channels=4, stages=((4, 1),)), rng))


def test_save_load_round_trip(tmp_path):
    model = build(small(), np.random.default_rng(3))
    randomize_bn(model, np.random.default_rng(4))
    model.save(tmp_path / "m.ornk")
    again = Backbone.load(tmp_path / "m.ornk")
    assert again.config == model.config
    assert again.content_hash() == model.content_hash()
