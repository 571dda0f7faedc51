import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedfair import nnet
from fedfair.dataset import synth_blobs
from fedfair.errors import ArchMismatch, EmptyData, FormatError, InvalidSpec, ShapeMismatch
from fedfair.fixtures import fixture_path
from fedfair.nnet import MlpArch, ModelParams, TrainingConfig


def tiny():
    fx = json.loads(fixture_path("mlp_tiny.json").read_text())
    p = ModelParams(fx["flat"], MlpArch(*fx["arch"]))
    return p, np.array(fx["X"], float), np.array(fx["y"]), fx


def zeros(arch):
    return ModelParams(np.zeros(arch.size), arch)


def test_param_count():
    assert MlpArch(784, 100, 10).size == 79_510
    assert len(nnet.init_params(MlpArch(784, 100, 10), 0).flat) == 79_510


def test_init_seeded():
    arch = MlpArch(20, 10, 3)
    a, b = nnet.init_params(arch, 5), nnet.init_params(arch, 5)
    np.testing.assert_array_equal(a.flat, b.flat)
    c = nnet.init_params(arch, 6)
    W1a, b1a, W2a, b2a = a.unpack()
    W1c, _, W2c, _ = c.unpack()
    weights_a = np.concatenate([W1a.ravel(), W2a.ravel()])
    weights_c = np.concatenate([W1c.ravel(), W2c.ravel()])
    assert (weights_a != weights_c).mean() >= 0.99
    assert not b1a.any() and not b2a.any()
    assert np.abs(W1a).max() <= math.sqrt(6 / 30)


def test_zero_weights_uniform():
    arch = MlpArch(4, 3, 10)
    X = np.random.default_rng(0).standard_normal((5, 4))
    loss, probs = nnet.forward_loss(zeros(arch), X, np.arange(5))
    np.testing.assert_allclose(probs, 0.1, atol=1e-15)
    assert loss == pytest.approx(math.log(10), abs=1e-12)


def test_saturated_logit():
    arch = MlpArch(1, 1, 3)
    # W1=1, b1=0, W2 puts 100 on class 2, so x=1 gives logits (0, 0, 100)
    p = ModelParams([1.0, 0.0, 0.0, 0.0, 100.0, 0.0, 0.0, 0.0], arch)
    loss, probs = nnet.forward_loss(p, [[1.0]], [2])
    assert loss < 1e-6
    assert probs.sum() == pytest.approx(1.0, abs=1e-12)


def test_tiny_fixture_loss_and_accuracy():
    p, X, y, fx = tiny()
    assert nnet.loss(p, X, y) == pytest.approx(fx["loss"], abs=1e-10)
    assert nnet.accuracy(p, X, y) == pytest.approx(fx["accuracy"], abs=1e-12)
    assert nnet.predict(p, X).tolist() == [0, 1, 0]


def test_shape_errors():
    p, X, y, _ = tiny()
    with pytest.raises(ShapeMismatch):
        nnet.forward_loss(p, np.zeros((2, 3)), [0, 1])
    with pytest.raises(ShapeMismatch):
        nnet.backward(p, X, y[:2])
    with pytest.raises(ShapeMismatch):
        nnet.loss(p, X, [0, 1, 2])
    with pytest.raises(ArchMismatch):
        ModelParams(np.zeros(5), p.arch)


def _random_case(seed):
    rng = np.random.default_rng(seed)
    arch = MlpArch(int(rng.integers(1, 10)), int(rng.integers(1, 10)), int(rng.integers(2, 6)))
    p = nnet.init_params(arch, rng)
    p = p.replace(p.flat + 0.1 * rng.standard_normal(arch.size))
    X = rng.standard_normal((6, arch.input_dim))
    y = rng.integers(0, arch.num_classes, 6)
    return p, X, y, rng


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_gradient_matches_finite_differences(seed):
    p, X, y, rng = _random_case(seed)
    coords = rng.choice(p.arch.size, size=min(5, p.arch.size), replace=False)
    g = nnet.backward(p, X, y)[coords]
    fd = nnet.finite_difference(p, X, y, coords, 1e-5)
    assert nnet.relative_error(g, fd).max() < 1e-6


def test_zero_input_has_zero_input_weight_gradient():
    p, _, _, rng = _random_case(3)
    X = np.zeros((4, p.arch.input_dim))
    g = nnet.backward(p, X, rng.integers(0, p.arch.num_classes, 4))
    assert not g[:p.arch.input_dim * p.arch.hidden_dim].any()


def test_duplicated_batch_same_gradient():
    p, X, y, _ = _random_case(4)
    g1 = nnet.backward(p, X, y)
    g2 = nnet.backward(p, np.vstack([X, X]), np.concatenate([y, y]))
    np.testing.assert_allclose(g1, g2, atol=1e-15, rtol=1e-12)


def test_empty_batch():
    p, X, y, _ = tiny()
    with pytest.raises(EmptyData):
        nnet.backward(p, X[:0], y[:0])
    with pytest.raises(EmptyData):
        nnet.accuracy(p, X[:0], y[:0])
    with pytest.raises(EmptyData):
        nnet.sgd_epochs(p, X[:0], y[:0], TrainingConfig())


def test_zero_learning_rate_is_identity():
    p, X, y, _ = _random_case(5)
    out = nnet.sgd_epochs(p, X, y, TrainingConfig(2, 3, 0.0, 1))
    assert out.flat.tobytes() == p.flat.tobytes()


def test_sgd_deterministic_and_learns_blobs():
    ds = synth_blobs(3, 2, 100, spread=5, seed=0)
    arch = MlpArch(2, 16, 3)
    cfg = TrainingConfig(batch_size=10, local_epochs=50, learning_rate=0.05, seed=1)
    a = nnet.sgd_epochs(nnet.init_params(arch, 1), ds.features, ds.labels, cfg)
    b = nnet.sgd_epochs(nnet.init_params(arch, 1), ds.features, ds.labels, cfg)
    assert a.flat.tobytes() == b.flat.tobytes()
    assert nnet.accuracy(a, ds.features, ds.labels) >= 95.0


def test_small_step_decreases_full_batch_loss():
    ds = synth_blobs(3, 2, 100, spread=5, seed=0)
    p = nnet.init_params(MlpArch(2, 16, 3), 2)
    before = nnet.loss(p, ds.features, ds.labels)
    after = nnet.loss(p.replace(p.flat - 1e-4 * nnet.backward(p, ds.features, ds.labels)), ds.features, ds.labels)
    assert after <= before


def test_average_params_cases():
    arch = MlpArch(2, 2, 2)
    ones, threes = ModelParams(np.ones(arch.size), arch), ModelParams(np.full(arch.size, 3.0), arch)
    np.testing.assert_array_equal(nnet.average_params([(ones, 1), (threes, 1)]).flat, 2.0)
    assert nnet.average_params([(ones, 1), (threes, 0)]).flat.tobytes() == ones.flat.tobytes()
    p, *_ = _random_case(6)
    np.testing.assert_allclose(nnet.average_params([(p, 0.3), (p, 5.0)]).flat, p.flat, rtol=1e-15, atol=1e-15)


def test_average_params_errors():
    a = zeros(MlpArch(2, 2, 2))
    with pytest.raises(ArchMismatch):
        nnet.average_params([(a, 1), (zeros(MlpArch(2, 3, 2)), 1)])
    with pytest.raises(InvalidSpec):
        nnet.average_params([(a, 0), (a, 0)])
    with pytest.raises(InvalidSpec):
        nnet.average_params([])


@settings(max_examples=100, deadline=None)
@given(st.floats(-10, 10), st.floats(0.01, 1), st.integers(0, 1000))
def test_average_params_linear(scale, w, seed):
    rng = np.random.default_rng(seed)
    arch = MlpArch(3, 2, 2)
    x, y = (ModelParams(rng.standard_normal(arch.size), arch) for _ in range(2))
    lhs = nnet.average_params([(x.replace(scale * x.flat), w), (y.replace(scale * y.flat), 1 - w + 0.01)])
    rhs = scale * nnet.average_params([(x, w), (y, 1 - w + 0.01)]).flat
    np.testing.assert_allclose(lhs.flat, rhs, atol=1e-12)


def test_accuracy_cases():
    arch = MlpArch(1, 1, 2)
    # logit for class 1 is x, class 0 is 0; positive x predicts 1
    p = ModelParams([1.0, 0.0, 0.0, 1.0, 0.0, 0.0], arch)
    assert nnet.accuracy(p, [[1.0], [2.0], [-1.0]], [1, 1, 0]) == 100.0
    # ties go to the lowest class index
    assert nnet.predict(zeros(MlpArch(2, 2, 4)), np.ones((3, 2))).tolist() == [0, 0, 0]
    rng = np.random.default_rng(0)
    y = np.repeat(np.arange(10), 100)
    acc = nnet.accuracy(zeros(MlpArch(5, 3, 10)), rng.standard_normal((1000, 5)), y)
    assert abs(acc - 10) <= 3


def test_checkpoint_roundtrip(tmp_path):
    p, *_ = _random_case(7)
    p.save(tmp_path / "m.bin")
    data = (tmp_path / "m.bin").read_bytes()
    assert data[:4] == b"MLP1"
    assert int.from_bytes(data[4:8], "little") == p.arch.input_dim
    assert len(data) == 16 + 8 * p.arch.size
    q = ModelParams.load(tmp_path / "m.bin")
    assert q.arch == p.arch and q.flat.tobytes() == p.flat.tobytes()
    (tmp_path / "bad.bin").write_bytes(data[:-1])
    with pytest.raises(FormatError):
        ModelParams.load(tmp_path / "bad.bin")
