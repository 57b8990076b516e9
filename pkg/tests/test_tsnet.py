import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from builders import SMALL_INPUT, SMALL_TSNET, small_tsnet_problem, tsnet_model_fn
from csidigits.errors import BadN, ShapeMismatch, WeightConstraintViolated, WrongCheckpointKind
from csidigits.model import CheckpointKind, ModelCheckpoint, load_checkpoint, save_checkpoint
from csidigits.neural import Mode, TrainConfig, grad_check
from csidigits.synth import SynthSpec, make_fixture_dataset
from csidigits.tsnet import (
    TsNet,
    TsNetConfig,
    evaluate_topn,
    fuse,
    predict_topn,
    _batches,
    rank_classes,
    topn_accuracy,
    train_tsnet,
)

TINY_SPEC = SynthSpec(num_classes=3, subcarriers=16, rate_hz=20.0, rate_jitter=(15.0, 30.0),
                      repetitions=6, noise_sigma=0.3, envelope_jitter=0.2, silence_class=False)
TINY_NET = TsNetConfig(lstm_hidden=8, conv_channels=(4, 4, 4), kernel_sizes=(3, 3, 3), fusion_dim=8,
                       num_classes=3)


@pytest.fixture(scope="module")
def tiny_dataset():
    return make_fixture_dataset(TINY_SPEC)


def test_fusion_weights_must_sum_to_one():
    with pytest.raises(WeightConstraintViolated):
        TsNetConfig(alpha=0.3, beta=0.8)
    with pytest.raises(WeightConstraintViolated):
        fuse(np.ones(2), np.ones(2), 0.5, 0.6)


def test_fuse_is_convex_combination():
    a, b = np.array([1.0, 2.0]), np.array([3.0, -1.0])
    assert np.allclose(fuse(a, b, 0.2, 0.8), [2.6, -0.4])
    assert np.array_equal(fuse(a, b, 1.0, 0.0), a)
    with pytest.raises(ShapeMismatch):
        fuse(np.ones(2), np.ones(3), 0.5, 0.5)


def test_rank_ties_broken_by_class_id():
    assert rank_classes(np.full(11, 1 / 11)).tolist() == list(range(11))
    assert rank_classes([0.1, 0.4, 0.4, 0.1]).tolist() == [1, 2, 0, 3]


def test_topn_counting_example():
    ranked = np.array([[2, 0, 1], [0, 1, 2], [1, 2, 0], [2, 1, 0]])
    labels = np.array([2, 1, 0, 0])
    # hit ranks 0, 1, 2, 2
    assert topn_accuracy(ranked, labels, 3).tolist() == [0.25, 0.5, 1.0]


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 30), st.integers(0, 2**31))
def test_topn_monotone_and_complete(n, seed):
    rng = np.random.default_rng(seed)
    ranked = rank_classes(rng.normal(size=(n, 11)))
    p = topn_accuracy(ranked, rng.integers(0, 11, n), 11)
    assert np.all(np.diff(p) >= 0) and p[-1] == 1.0


def test_forward_shapes_both_axes():
    for axis in ("subcarrier", "time"):
        cfg = TsNetConfig(**{**SMALL_TSNET.__dict__, "spatial_axis": axis, "kernel_sizes": (2, 2, 2)})
        net = TsNet(cfg, SMALL_INPUT, np.float64, seed=1)
        logits, _ = net.forward(np.zeros((3,) + SMALL_INPUT))
        assert logits.shape == (3, 11)


def test_input_too_short_for_kernels():
    with pytest.raises(ShapeMismatch):
        TsNet(TsNetConfig(kernel_sizes=(7, 5, 3)), (200, 10), np.float32)


def test_wrong_sample_shape_rejected():
    net = TsNet(SMALL_TSNET, SMALL_INPUT, np.float64)
    with pytest.raises(ShapeMismatch):
        net.predict_logits(np.zeros((1, 5, 13)))


def test_same_seed_same_init():
    a = TsNet(SMALL_TSNET, SMALL_INPUT, np.float32, seed=4).params.tensors()
    b = TsNet(SMALL_TSNET, SMALL_INPUT, np.float32, seed=4).params.tensors()
    c = TsNet(SMALL_TSNET, SMALL_INPUT, np.float32, seed=5).params.tensors()
    assert all(np.array_equal(x[1], y[1]) for x, y in zip(a, b))
    assert not all(np.array_equal(x[1], y[1]) for x, y in zip(a, c))


def test_dropout_train_vs_eval():
    net, (x, _) = small_tsnet_problem(np.float64)
    e1, _ = net.forward(x, Mode.EVAL)
    e2, _ = net.forward(x, Mode.EVAL)
    assert np.array_equal(e1, e2)
    t1, _ = net.forward(x, Mode.TRAIN, dropout_p=0.5, seed=0, step=0)
    t2, _ = net.forward(x, Mode.TRAIN, dropout_p=0.5, seed=0, step=0)
    t3, _ = net.forward(x, Mode.TRAIN, dropout_p=0.5, seed=0, step=1)
    assert np.array_equal(t1, t2) and not np.array_equal(t1, t3)


@pytest.mark.parametrize("dtype,tol", [(np.float64, 1e-6), (np.float32, 1e-3)])
def test_gradients_match_finite_differences(dtype, tol):
    net, inputs = small_tsnet_problem(dtype)
    report = grad_check(tsnet_model_fn(), net.params, inputs, tolerance=tol)
    assert report.passed, report.summary()


def test_checkpoint_round_trip_preserves_predictions(tmp_path):
    net, (x, _) = small_tsnet_problem(np.float32)
    ckpt = net.to_checkpoint(class_names=[str(k) for k in range(11)])
    path = tmp_path / "m.ckpt"
    path.write_bytes(save_checkpoint(ckpt))
    back = TsNet.from_checkpoint(load_checkpoint(path.read_bytes()))
    assert np.array_equal(back.predict_logits(x), net.predict_logits(x))


def test_from_checkpoint_rejects_autoencoder():
    with pytest.raises(WrongCheckpointKind):
        TsNet.from_checkpoint(ModelCheckpoint(CheckpointKind.AUTOENCODER, {}, ()))


def test_training_learns_and_is_reproducible(tiny_dataset):
    tc = TrainConfig(epochs=15, batch_size=6, seed=3, weight_decay=0.0, dropout_p=0.2, learning_rate=0.01)
    ckpt, hist = train_tsnet(tiny_dataset, TINY_NET, tc)
    ckpt2, _ = train_tsnet(tiny_dataset, TINY_NET, tc)
    assert hist[-1].loss < hist[0].loss
    assert hist[-1].train_p1 > 1 / 3
    assert all(np.array_equal(a[1], b[1]) for a, b in zip(ckpt.tensors, ckpt2.tensors))


def test_predict_and_evaluate(tiny_dataset):
    net = TsNet(TINY_NET, tiny_dataset.sample_shape, np.float32, seed=0)
    ranked = predict_topn(net, tiny_dataset.samples[0], 2)
    assert len(ranked) == 2
    with pytest.raises(BadN):
        predict_topn(net, tiny_dataset.samples[0], 4)
    report = evaluate_topn(net, tiny_dataset, 3)
    assert report.overall[-1] == 1.0
    assert set(report.per_class) == {0, 1, 2}


def test_lone_trailing_sample_joins_previous_batch():
    chunks = _batches(np.arange(33), 32)
    assert [len(c) for c in chunks] == [33]
    assert [len(c) for c in _batches(np.arange(70), 32)] == [32, 32, 6]
    assert np.array_equal(np.concatenate(_batches(np.arange(65), 32)), np.arange(65))
