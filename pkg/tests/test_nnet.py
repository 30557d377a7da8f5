import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from beolang import nnet
from beolang.nnet import AdamState, Network, NetworkSpec

from oracles import loop_forward


def make(input_dim, layers, seed=0):
    return nnet.init_network(NetworkSpec(input_dim, tuple(layers), seed))


# -- construction and forward --------------------------------------------------


def test_init_deterministic_with_zero_biases():
    a = make(10, [(8, "relu"), (3, "linear")], seed=4)
    b = make(10, [(8, "relu"), (3, "linear")], seed=4)
    c = make(10, [(8, "relu"), (3, "linear")], seed=5)
    assert all(np.array_equal(p, q) for p, q in zip(a.params(), b.params()))
    assert not np.array_equal(a.weights[0], c.weights[0])
    assert all(not bias.any() for bias in a.biases)
    assert a.n_params() == 10 * 8 + 8 + 8 * 3 + 3


def test_spec_validation():
    with pytest.raises(ValueError):
        NetworkSpec(0, ((3, "linear"),))
    with pytest.raises(ValueError):
        NetworkSpec(3, ((0, "linear"),))
    with pytest.raises(ValueError):
        NetworkSpec(3, ((2, "tanh"),))
    with pytest.raises(ValueError):
        NetworkSpec(3, ())


def test_identity_network():
    spec = NetworkSpec(4, ((4, "linear"),))
    net = Network(spec, [np.eye(4)], [np.zeros(4)])
    x = np.array([1.0, -2.0, 0.5, 3.0])
    assert np.array_equal(nnet.predict(net, x), x)


def test_relu_zeroes_negatives():
    spec = NetworkSpec(3, ((3, "relu"),))
    net = Network(spec, [np.eye(3)], [np.zeros(3)])
    assert nnet.predict(net, [-1.0, 2.0, -3.0]).tolist() == [0.0, 2.0, 0.0]


def test_sigmoid_stable_for_large_inputs():
    spec = NetworkSpec(1, ((1, "sigmoid"),))
    net = Network(spec, [np.ones((1, 1))], [np.zeros(1)])
    out = nnet.predict(net, np.array([[-1000.0], [0.0], [1000.0]]))
    assert np.all(np.isfinite(out))
    assert out[:, 0].tolist() == [0.0, 0.5, 1.0]


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_forward_matches_loop_oracle(seed):
    net = make(7, [(6, "relu"), (5, "sigmoid"), (3, "linear")], seed=seed % 1000)
    rng = np.random.default_rng(seed)
    for layer in net.biases:
        layer += rng.normal(size=layer.shape)
    x = rng.normal(size=7)
    assert np.abs(nnet.predict(net, x) - loop_forward(net, x)).max() < 1e-12
    # batches agree with single rows
    xs = rng.normal(size=(4, 7))
    batch = nnet.predict(net, xs)
    for row, out in zip(xs, batch):
        assert np.abs(nnet.predict(net, row) - out).max() < 1e-12


def test_forward_dimension_error():
    net = make(5, [(2, "linear")])
    with pytest.raises(ValueError):
        nnet.forward(net, np.zeros(4))


# -- losses --------------------------------------------------------------------


def test_cosine_similarity_examples():
    assert nnet.cosine_similarity([1.0, 0.0], [1.0, 0.0]) == 1.0
    assert nnet.cosine_similarity([1.0, 0.0], [0.0, 1.0]) == 0.0
    assert nnet.cosine_similarity([1.0, 0.0], [-1.0, 0.0]) == -1.0
    with pytest.raises(ValueError):
        nnet.cosine_similarity([0.0, 0.0], [1.0, 0.0])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0.01, 100.0), st.floats(-100.0, -0.01))
def test_cosine_scale_and_symmetry(seed, pos, neg):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=6), rng.normal(size=6)
    s = nnet.cosine_similarity(x, y)
    assert -1.0 <= s <= 1.0
    assert nnet.cosine_similarity(y, x) == pytest.approx(s, abs=1e-12)
    assert nnet.cosine_similarity(pos * x, y) == pytest.approx(s, abs=1e-12)
    assert nnet.cosine_similarity(neg * x, y) == pytest.approx(-s, abs=1e-12)


def test_cosine_embedding_loss_examples():
    assert nnet.cosine_embedding_loss(1.0, 1) == 0.0
    assert nnet.cosine_embedding_loss(0.25, 1) == 0.75
    assert nnet.cosine_embedding_loss(-0.3, -1) == 0.0
    assert nnet.cosine_embedding_loss(0.4, -1) == 0.4
    assert nnet.cosine_embedding_loss(0.4, -1, margin=0.5) == 0.0
    with pytest.raises(ValueError):
        nnet.cosine_embedding_loss(0.4, 0)


def test_bce_examples():
    assert nnet.bce_loss([0.5], [1.0]) == pytest.approx(np.log(2.0))
    assert nnet.bce_loss([1.0], [1.0]) == pytest.approx(-np.log(1.0 - nnet.BCE_EPS), abs=1e-12)
    assert np.isfinite(nnet.bce_loss([0.0], [1.0]))
    assert nnet.mse_loss([1.0, 3.0], [1.0, 1.0]) == 2.0
    with pytest.raises(ValueError):
        nnet.mse_loss([1.0], [1.0, 2.0])


def test_cosine_batch_matches_scalar_loss():
    rng = np.random.default_rng(0)
    x, y = rng.normal(size=(6, 4)), rng.normal(size=(6, 4))
    labels = np.array([1, -1, 1, -1, -1, 1])
    loss, _, _, sims = nnet.cosine_embedding_batch(x, y, labels)
    expected = np.mean([nnet.cosine_embedding_loss(nnet.cosine_similarity(a, b), l)
                        for a, b, l in zip(x, y, labels)])
    assert loss == pytest.approx(expected, abs=1e-12)
    assert np.allclose(sims, [nnet.cosine_similarity(a, b) for a, b in zip(x, y)])


def test_cosine_batch_gradients():
    rng = np.random.default_rng(1)
    x, y = rng.normal(size=(5, 4)), rng.normal(size=(5, 4))
    labels = np.array([1, -1, 1, -1, 1])
    # keep negatives away from the hinge kink
    y[1] = x[1] + 0.1 * y[1]
    y[3] = -x[3] + 0.1 * y[3]
    _, gx, gy, _ = nnet.cosine_embedding_batch(x, y, labels)

    def loss():
        return nnet.cosine_embedding_batch(x, y, labels)[0]

    assert nnet.check_gradients([x, y], loss, [gx, gy]) < 1e-6


# -- backward ------------------------------------------------------------------


def test_linear_layer_gradient_is_outer_product():
    net = make(3, [(2, "linear")])
    x = np.array([1.0, 2.0, -1.0])
    g = np.array([0.5, -2.0])
    grads, gin = nnet.backward(net, nnet.forward(net, x), g)
    assert np.array_equal(grads[0][0], np.outer(g, x))
    assert np.array_equal(grads[0][1], g)
    assert np.allclose(gin, net.weights[0].T @ g)


def test_backward_shape_errors():
    net = make(3, [(2, "linear")])
    acts = nnet.forward(net, np.zeros(3))
    with pytest.raises(ValueError):
        nnet.backward(net, acts, np.zeros(3))
    with pytest.raises(ValueError):
        nnet.backward(net, acts[:1], np.zeros(2))


def test_gradients_finite_on_random_batches():
    net = make(8, [(16, "relu"), (4, "sigmoid")], seed=2)
    x = np.random.default_rng(0).normal(size=(10, 8)) * 50.0
    acts = nnet.forward(net, x)
    grads, _ = nnet.backward(net, acts, nnet.bce_grad(acts[-1], np.ones_like(acts[-1])))
    assert all(np.all(np.isfinite(g)) for g in nnet.flat_grads(grads))


def test_gradient_check_linear_mse():
    net = make(5, [(3, "linear")], seed=1)
    x = np.random.default_rng(0).normal(size=(4, 5))
    target = np.random.default_rng(1).normal(size=(4, 3))
    assert nnet.gradient_check(net, x, "mse", target) < 1e-8


def test_gradient_check_relu_mse():
    net = make(6, [(12, "relu"), (10, "relu"), (4, "linear")], seed=3)
    x = np.random.default_rng(2).normal(size=(5, 6))
    target = np.random.default_rng(3).normal(size=(5, 4))
    assert nnet.gradient_check(net, x, "mse", target) < 1e-4


def test_gradient_check_sigmoid_bce():
    net = make(6, [(8, "relu"), (3, "sigmoid")], seed=4)
    x = np.random.default_rng(4).normal(size=(5, 6))
    target = (np.random.default_rng(5).random((5, 3)) < 0.5).astype(float)
    assert nnet.gradient_check(net, x, "bce", target) < 1e-4


def test_hidden_gradient_injection():
    # a second loss reading the hidden layer must add its gradient there
    net = make(4, [(5, "sigmoid"), (2, "linear")], seed=7)
    x = np.random.default_rng(0).normal(size=(3, 4))
    probe = np.random.default_rng(1).normal(size=(3, 5))

    def loss():
        acts = nnet.forward(net, x)
        return float(np.sum(acts[-1] ** 2) + np.sum(acts[1] * probe))

    acts = nnet.forward(net, x)
    grads, _ = nnet.backward(net, acts, 2.0 * acts[-1], hidden_grads={1: probe})
    assert nnet.check_gradients(net.params(), loss, nnet.flat_grads(grads)) < 1e-6


# -- Adam ----------------------------------------------------------------------


def test_adam_zero_gradient_no_move():
    p = [np.array([1.0, -2.0])]
    nnet.adam_step(p, [np.zeros(2)], AdamState(lr=0.1))
    assert p[0].tolist() == [1.0, -2.0]


def test_adam_first_step_hand_computed():
    p = [np.array([1.0, 1.0])]
    g = [np.array([0.5, -4.0])]
    nnet.adam_step(p, g, AdamState(lr=0.01))
    # bias-corrected first step moves each entry by lr * g / (|g| + eps)
    expected = 1.0 - 0.01 * g[0] / (np.abs(g[0]) + 1e-8)
    assert np.allclose(p[0], expected, atol=1e-15)


def test_adam_constant_gradient_moves_against_it():
    p = [np.zeros(3)]
    state = AdamState(lr=0.05)
    for _ in range(20):
        nnet.adam_step(p, [np.array([1.0, -1.0, 0.0])], state)
    assert p[0][0] < 0 < p[0][1] and p[0][2] == 0.0
    assert state.step == 20


def test_adam_shape_mismatch():
    with pytest.raises(ValueError):
        nnet.adam_step([np.zeros(3)], [np.zeros(2)], AdamState())


def _train(seed):
    net = make(4, [(8, "relu"), (2, "linear")], seed=seed)
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(32, 4))
    y = np.column_stack([x[:, 0] - x[:, 1], x[:, 2] * 0.5])
    state = AdamState(lr=0.01)
    for _ in range(200):
        acts = nnet.forward(net, x)
        grads, _ = nnet.backward(net, acts, nnet.mse_grad(acts[-1], y))
        nnet.adam_step(net, grads, state)
    return net, nnet.mse_loss(nnet.predict(net, x), y)


def test_training_reduces_loss_reproducibly():
    a, loss_a = _train(3)
    b, loss_b = _train(3)
    assert loss_a < 0.05
    assert loss_a == loss_b
    assert all(np.array_equal(p, q) for p, q in zip(a.params(), b.params()))


# -- affine folds and persistence ----------------------------------------------


def test_affine_folds():
    net = make(3, [(4, "relu"), (2, "linear")], seed=1)
    rng = np.random.default_rng(0)
    x = rng.normal(size=(5, 3))
    shift, scale = rng.normal(size=3), rng.uniform(0.5, 2.0, size=3)
    folded = nnet.fold_input_affine(net, shift, scale)
    assert np.allclose(nnet.predict(folded, x), nnet.predict(net, (x - shift) / scale), atol=1e-12)
    oshift, oscale = rng.normal(size=2), rng.uniform(0.5, 2.0, size=2)
    out = nnet.fold_output_affine(net, oshift, oscale)
    assert np.allclose(nnet.predict(out, x), nnet.predict(net, x) * oscale + oshift, atol=1e-12)
    with pytest.raises(ValueError):
        nnet.fold_output_affine(make(3, [(2, "sigmoid")]), 0.0, 1.0)


def test_save_load_roundtrip(tmp_path):
    net = make(5, [(7, "relu"), (3, "sigmoid"), (2, "linear")], seed=9)
    nnet.save_network(net, tmp_path / "n.bin")
    back = nnet.load_network(tmp_path / "n.bin")
    assert back.activations == net.activations
    assert all(np.array_equal(p, q) for p, q in zip(back.params(), net.params()))
    (tmp_path / "bad.bin").write_bytes(b"JUNK")
    with pytest.raises(ValueError):
        nnet.load_network(tmp_path / "bad.bin")
