"""From-scratch MLP: gradients, Adam, softmax utilities, checkpoints."""

import numpy as np
import pytest

import fogsched.neural as neural
from fogsched.neural import (AdamState, MlpParams, adam_step, backward,
                             entropy, finite_difference_check, forward,
                             init_mlp, load_checkpoint, log_softmax,
                             save_checkpoint, softmax)


def quadratic_loss(target):
    def loss(out):
        return float(0.5 * np.sum((out - target) ** 2))

    def grad(out):
        return out - target

    return loss, grad


def test_init_bounds_and_determinism():
    rng = np.random.default_rng(0)
    p = init_mlp(5, 8, 3, "tanh", rng)
    assert p.w1.shape == (5, 8) and p.b1.shape == (8,)
    assert p.w2.shape == (8, 3) and p.b2.shape == (3,)
    assert np.all(np.abs(p.w1) <= 1 / np.sqrt(5))
    assert np.all(np.abs(p.b1) <= 1 / np.sqrt(5))
    assert np.all(np.abs(p.w2) <= 1 / np.sqrt(8))
    q = init_mlp(5, 8, 3, "tanh", np.random.default_rng(0))
    assert all(np.array_equal(a, b) for a, b in zip(p.arrays(), q.arrays()))


def test_init_rejects_bad_args():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError, match="unknown activation"):
        init_mlp(4, 4, 2, "sigmoid", rng)
    with pytest.raises(ValueError, match="must be positive"):
        init_mlp(0, 4, 2, "tanh", rng)


@pytest.mark.parametrize("activation", ["tanh", "relu", "linear"])
def test_gradients_match_finite_differences(activation):
    rng = np.random.default_rng(42)
    for _ in range(5):
        p = init_mlp(int(rng.integers(2, 6)), int(rng.integers(2, 6)),
                     int(rng.integers(1, 4)), activation, rng)
        x = rng.normal(size=p.input_dim)
        loss, grad = quadratic_loss(rng.normal(size=p.output_dim))
        assert finite_difference_check(p, x, loss, grad) < 1e-4


def test_batched_backward_sums_per_sample():
    rng = np.random.default_rng(3)
    p = init_mlp(4, 6, 3, "tanh", rng)
    xs = rng.normal(size=(5, 4))
    gs = rng.normal(size=(5, 3))
    batched = backward(p, xs, gs)
    summed = [np.zeros_like(a) for a in batched.arrays()]
    for i in range(5):
        gi = backward(p, xs[i], gs[i])
        for acc, a in zip(summed, gi.arrays()):
            acc += a
    for a, b in zip(batched.arrays(), summed):
        assert np.allclose(a, b, atol=1e-12)


def test_forward_batch_matches_single():
    rng = np.random.default_rng(4)
    p = init_mlp(3, 5, 2, "relu", rng)
    xs = rng.normal(size=(7, 3))
    out = forward(p, xs)
    for i in range(7):
        assert np.allclose(out[i], forward(p, xs[i]), atol=1e-15)


def test_adam_first_step_moves_by_lr():
    # with zero moments, the bias-corrected first step is lr * sign(g)
    p = MlpParams(w1=np.zeros((2, 2)), b1=np.zeros(2),
                  w2=np.zeros((2, 1)), b2=np.zeros(1), activation="linear")
    g = neural.Grads(w1=np.array([[0.5, -2.0], [3.0, 0.0]]),
                     b1=np.array([1.0, -1.0]),
                     w2=np.array([[4.0], [-0.1]]), b2=np.array([2.0]))
    st = AdamState.zeros(p)
    adam_step(p, g, st, lr=0.01)
    assert st.step == 1
    want = -0.01 * np.sign(g.w1) * (np.abs(g.w1) / (np.abs(g.w1) + 1e-8))
    assert np.allclose(p.w1, want, atol=1e-9)
    assert p.w1[1, 1] == 0.0  # zero gradient leaves the entry alone


def test_adam_converges_on_quadratic():
    rng = np.random.default_rng(8)
    p = init_mlp(2, 8, 1, "tanh", rng)
    st = AdamState.zeros(p)
    x = np.array([0.3, -0.7])
    loss, grad = quadratic_loss(np.array([0.25]))
    for _ in range(500):
        out = forward(p, x)
        adam_step(p, backward(p, x, grad(out)), st, lr=0.01)
    assert loss(forward(p, x)) < 1e-6


def test_softmax_partition_and_shift_invariance():
    rng = np.random.default_rng(12)
    z = rng.normal(size=(6, 4)) * 3
    p = softmax(z)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-12)
    assert np.allclose(softmax(z + 100.0), p, atol=1e-12)
    assert np.allclose(np.exp(log_softmax(z)), p, atol=1e-12)
    # huge logits stay finite
    assert np.isfinite(softmax(np.array([1e4, -1e4, 0.0]))).all()


def test_entropy_known_values():
    assert entropy(np.array([1.0, 0.0, 0.0])) == 0.0
    assert entropy(np.full(4, 0.25)) == pytest.approx(np.log(4))
    batched = entropy(np.array([[0.5, 0.5], [1.0, 0.0]]))
    assert batched == pytest.approx([np.log(2), 0.0])


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(77)
    actor = init_mlp(10, 16, 4, "tanh", rng)
    critic = init_mlp(10, 16, 1, "relu", rng)
    st = AdamState.zeros(actor)
    adam_step(actor, backward(actor, rng.normal(size=10),
                              rng.normal(size=4)), st, lr=1e-3)
    path = str(tmp_path / "net.bin")
    save_checkpoint(path, {"kind": "test", "gamma": 0.9},
                    [("actor", actor, st), ("critic", critic, None)])
    meta, sections = load_checkpoint(path)
    assert meta["kind"] == "test" and meta["gamma"] == 0.9
    assert list(sections) == ["actor", "critic"]
    a2, st2 = sections["actor"]
    assert all(np.array_equal(x, y) for x, y in zip(actor.arrays(), a2.arrays()))
    assert st2.step == 1
    assert all(np.array_equal(x, y) for x, y in zip(st.m + st.v, st2.m + st2.v))
    c2, none_adam = sections["critic"]
    assert none_adam is None
    assert c2.activation == "relu"


def test_checkpoint_rejects_foreign_file(tmp_path):
    path = str(tmp_path / "bogus.bin")
    with open(path, "wb") as fh:
        fh.write(b"PK\x03\x04 definitely not a checkpoint")
    with pytest.raises(ValueError, match="not a fogsched checkpoint"):
        load_checkpoint(path)


def test_checkpoint_detects_truncation(tmp_path):
    rng = np.random.default_rng(1)
    p = init_mlp(4, 4, 2, "tanh", rng)
    path = str(tmp_path / "t.bin")
    save_checkpoint(path, {}, [("only", p, None)])
    blob = open(path, "rb").read()
    with open(path, "wb") as fh:
        fh.write(blob[:len(blob) - 16])
    with pytest.raises(ValueError, match="truncated checkpoint"):
        load_checkpoint(path)
