import numpy as np
import pytest

from rrda.model import (
    Encoder,
    LinearHead,
    ModelSnapshot,
    SourceConfig,
    load_snapshot,
    save_snapshot,
    train_source,
)
from rrda.numeric import cross_entropy, grad_check, softmax_entropy


def _param_check(module, name, loss_fn, h=1e-6):
    """grad_check of ``loss_fn()`` w.r.t. one named parameter array of ``module``."""
    original = module.params[name].copy()

    def fun(value):
        module.params[name] = value
        loss, grads = loss_fn()
        return loss, grads[name]

    try:
        return grad_check(fun, original, h=h)
    finally:
        module.params[name] = original


def test_identity_single_layer_encoder():
    enc = Encoder([3, 3])
    enc.params["layer0.weight"] = np.eye(3)
    x = np.array([[1.0, -2.0, 0.5], [0.0, 3.0, -1.0]])
    np.testing.assert_array_equal(enc(x), x)


def test_zero_weights_give_zero_features():
    enc = Encoder([4, 8, 5])
    for k in enc.params:
        enc.params[k][:] = 0.0
    assert not np.any(enc(np.ones((3, 4))))


def test_encoder_dim_mismatch():
    with pytest.raises(ValueError):
        Encoder([3, 4])(np.ones((2, 5)))


@pytest.mark.parametrize("loss_kind", ["ce", "entropy"])
def test_encoder_and_head_backward_match_finite_differences(loss_kind):
    rng = np.random.default_rng(7)
    enc = Encoder([3, 6, 5, 4], rng)
    head = LinearHead.random(3, 4, rng)
    x = rng.normal(size=(7, 3))
    y = rng.integers(0, 3, size=7)

    def loss_fn():
        z, cache = enc.forward(x)
        logits = head(z)
        if loss_kind == "ce":
            loss, g = cross_entropy(logits, y)
        else:
            loss, g = softmax_entropy(logits)
        hg, gz = head.backward(z, g / len(x))
        return loss.mean(), {**enc.backward(cache, gz), **{f"head.{k}": v for k, v in hg.items()}}

    for name in enc.params:
        assert _param_check(enc, name, loss_fn) < 1e-4, name
    for name in ("weight", "bias"):
        original = head.params[name].copy()

        def fun(value, name=name):
            head.params[name] = value
            loss, grads = loss_fn()
            return loss, grads[f"head.{name}"]

        assert grad_check(fun, original, h=1e-6) < 1e-4
        head.params[name] = original


def test_zero_head_gives_uniform_entropy():
    head = LinearHead(np.zeros((4, 3)))
    h, _ = softmax_entropy(head(np.random.default_rng(0).normal(size=(5, 3))))
    np.testing.assert_allclose(h, np.log(4), atol=1e-14)


def test_identity_head_argmax():
    head = LinearHead(np.eye(4))
    np.testing.assert_array_equal(np.argmax(head(np.eye(4)), axis=1), np.arange(4))


def test_head_hand_multiplication():
    z = np.array([[1.0, 2.0, 3.0], [-1.0, 0.0, 2.0]])
    w = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 1.0], [2.0, -1.0, 0.5]])
    b = np.array([0.5, 0.0, -1.0, 1.0])
    # hand-computed z @ w.T + b
    expected = np.array([[1.5, 2.0, 5.0, 2.5], [-0.5, 0.0, 0.0, 0.0]])
    np.testing.assert_array_equal(LinearHead(w, b)(z), expected)


def test_head_affine_identity():
    # dyadic values keep every product and sum exact
    rng = np.random.default_rng(3)
    w = rng.integers(-8, 8, size=(3, 4)) / 4.0
    b = rng.integers(-8, 8, size=3) / 4.0
    head = LinearHead(w, b)
    z1 = rng.integers(-8, 8, size=(5, 4)) / 8.0
    z2 = rng.integers(-8, 8, size=(5, 4)) / 8.0
    a, c = 0.5, 2.0
    lhs = head(a * z1 + c * z2)
    rhs = a * head(z1) + c * head(z2) - (a + c - 1) * b
    np.testing.assert_array_equal(lhs, rhs)


def test_head_dim_mismatch():
    with pytest.raises(ValueError):
        LinearHead(np.zeros((3, 4)))(np.zeros((2, 5)))


def test_snapshot_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(11)
    snap = ModelSnapshot(Encoder([2, 8, 4], rng), LinearHead.random(5, 4, rng), 3, 2, 99, "target-head")
    path = tmp_path / "m.json"
    save_snapshot(snap, path)
    back = load_snapshot(path)
    x = rng.normal(size=(10, 2))
    assert np.array_equal(back.logits(x), snap.logits(x))
    assert (back.n_known, back.k_prime, back.seed, back.stage) == (3, 2, 99, "target-head")
    for k, v in snap.encoder.params.items():
        assert np.array_equal(back.encoder.params[k], v)


def test_snapshot_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_snapshot(tmp_path / "absent.json")


def _blobs(n_per, rng):
    centers = np.array([[0.0, 5.0], [5.0, -3.0], [-5.0, -3.0]])
    x = np.concatenate([c + rng.normal(scale=0.5, size=(n_per, 2)) for c in centers])
    return x, np.repeat(np.arange(3), n_per)


def test_train_source_separable_blobs():
    x, y = _blobs(60, np.random.default_rng(0))
    snap, losses = train_source(x, y, 3, SourceConfig(epochs=50), seed=1)
    acc = np.mean(np.argmax(snap.logits(x), axis=1) == y)
    assert acc >= 0.99
    assert snap.stage == "source"
    # epoch-averaged loss falls over training
    assert np.mean(losses[-5:]) < np.mean(losses[:5])


def test_train_source_memorizes_single_samples():
    x = np.array([[0.0, 1.0], [1.0, 0.0], [-1.0, -1.0]])
    snap, losses = train_source(x, np.arange(3), 3, SourceConfig(epochs=300, label_smoothing=0.0, weight_decay=0.0))
    assert losses[-1] < 1e-3


def test_train_source_deterministic():
    x, y = _blobs(20, np.random.default_rng(1))
    a, _ = train_source(x, y, 3, SourceConfig(epochs=5), seed=4)
    b, _ = train_source(x, y, 3, SourceConfig(epochs=5), seed=4)
    for k in a.encoder.params:
        assert np.array_equal(a.encoder.params[k], b.encoder.params[k])
    assert np.array_equal(a.head.weight, b.head.weight)


def test_train_source_rejects_empty():
    with pytest.raises(ValueError):
        train_source(np.zeros((0, 2)), np.zeros(0, dtype=int), 3)
