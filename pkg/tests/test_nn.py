import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gdtsim.errors import DegenerateInputError, EmptyBufferError, NumericError, ShapeError
from gdtsim.nn import (DenseNetwork, Optimizer, OptimizerConfig, RecurrentCell, ReplayBuffer,
                       check_model, gradient_check, load_networks, save_networks, train_step)


def linear_net(n):
    net = DenseNetwork([n, n], ["linear"])
    net.set_params([np.eye(n), np.zeros(n)])
    return net


def test_identity_weights_pass_input_through():
    x = np.array([[1.5, -2.0, 0.25]])
    np.testing.assert_array_equal(linear_net(3).forward(x), x)


def test_zero_weights_give_bias():
    net = DenseNetwork([4, 2], ["linear"])
    net.set_params([np.zeros((4, 2)), np.array([0.5, -3.0])])
    np.testing.assert_array_equal(net.forward(np.ones(4)), [0.5, -3.0])


def test_relu_clamps_negative():
    net = DenseNetwork([1, 1], ["relu"])
    net.set_params([np.ones((1, 1)), np.zeros(1)])
    assert net.forward(np.array([-1.0]))[0] == 0.0
    assert net.forward(np.array([2.0]))[0] == 2.0


def test_width_mismatch_raises():
    with pytest.raises(ShapeError):
        DenseNetwork([3, 2]).forward(np.ones((5, 4)))


def test_zero_learning_rate_leaves_params():
    rng = np.random.default_rng(0)
    net = DenseNetwork([3, 5, 1], rng=rng)
    before = [p.copy() for p in net.params]
    for rule in ("sgd", "adam"):
        opt = Optimizer(OptimizerConfig(rule, 0.0))
        train_step(net, (rng.normal(size=(8, 3)), rng.normal(size=(8, 1))), opt=opt)
    for a, b in zip(before, net.params):
        np.testing.assert_array_equal(a, b)


def test_quadratic_fit_loss_keeps_falling():
    # fit y = x^2 on [-1, 1] with full-batch steps
    rng = np.random.default_rng(1)
    net = DenseNetwork([1, 16, 1], ["tanh", "linear"], rng)
    X = np.linspace(-1, 1, 64)[:, None]
    Y = X ** 2
    opt = Optimizer(OptimizerConfig("adam", 1e-2))
    losses = [train_step(net, (X, Y), opt=opt) for _ in range(200)]
    for i in range(0, len(losses) - 50):
        assert losses[i + 50] < losses[i]


def test_same_seed_same_batches_same_params():
    def run():
        rng = np.random.default_rng(3)
        net = DenseNetwork([2, 8, 1], rng=rng)
        opt = Optimizer()
        for _ in range(50):
            X = rng.normal(size=(16, 2))
            train_step(net, (X, X.sum(axis=1, keepdims=True)), opt=opt)
        return net.params

    for a, b in zip(run(), run()):
        np.testing.assert_array_equal(a, b)


def test_nan_loss_raises_numeric_error():
    net = DenseNetwork([1, 1], ["linear"])
    with pytest.raises(NumericError), np.errstate(invalid="ignore"):
        train_step(net, (np.array([[np.nan]]), np.array([[0.0]])))


def test_recurrent_zero_params_output_bias():
    cell = RecurrentCell(2, 4, 3)
    cell.set_params([np.zeros_like(p) for p in cell.params[:-1]] + [np.array([1.0, 2.0, 3.0])])
    out = cell.forward(np.random.default_rng(0).normal(size=(5, 7, 2)))
    np.testing.assert_array_equal(out, np.tile([1.0, 2.0, 3.0], (5, 1)))


def test_recurrent_is_stateless_between_calls():
    cell = RecurrentCell(2, 6, 2, np.random.default_rng(2))
    x = np.array([[[0.3, -0.7]]])
    np.testing.assert_array_equal(cell.forward(x), cell.forward(x))


def test_recurrent_shape_error():
    with pytest.raises(ShapeError):
        RecurrentCell(2, 4).forward(np.ones((3, 5, 3)))


def test_recurrent_unroll_gradient():
    rng = np.random.default_rng(4)
    cell = RecurrentCell(2, 6, 2, rng)
    assert check_model(cell, rng.normal(size=(3, 5, 2)), rng.normal(size=(3, 2))) < 1e-4


def test_gradcheck_linear_mse():
    rng = np.random.default_rng(5)
    net = DenseNetwork([4, 3], ["linear"], rng)
    assert check_model(net, rng.normal(size=(6, 4)), rng.normal(size=(6, 3))) < 1e-6


def test_gradcheck_relu_two_layer():
    rng = np.random.default_rng(6)
    net = DenseNetwork([3, 10, 2], ["relu", "linear"], rng)
    x = rng.normal(size=(5, 3))
    # keep the probe away from ReLU kinks
    _, cache = net.forward_cache(x)
    assert np.min(np.abs(cache[1][0])) > 1e-3
    assert check_model(net, x, rng.normal(size=(5, 2))) < 1e-4


def test_gradcheck_zero_gradient_probe():
    p = [np.ones(3)]
    with pytest.raises(DegenerateInputError):
        gradient_check(p, lambda: 0.0, [np.zeros(3)])


def test_replay_fifo_eviction():
    buf = ReplayBuffer(3)
    for i in range(4):
        buf.push(i)
    assert buf.items() == [1, 2, 3]


def test_replay_sample_from_pushed():
    buf = ReplayBuffer(10)
    for i in range(5):
        buf.push(("t", i))
    got = buf.sample(2, np.random.default_rng(0))
    assert len(got) == 2
    assert all(g in buf.items() for g in got)


def test_replay_uniform_frequencies():
    buf = ReplayBuffer(4)
    for i in range(4):
        buf.push(i)
    rng = np.random.default_rng(7)
    draws = [x for _ in range(25_000) for x in buf.sample(4, rng)]
    freq = np.bincount(draws, minlength=4) / len(draws)
    assert np.all(np.abs(freq - 0.25) <= 0.01)


def test_replay_empty_raises():
    with pytest.raises(EmptyBufferError):
        ReplayBuffer(2).sample(1, np.random.default_rng(0))


def test_replay_oversized_sample_rejected():
    buf = ReplayBuffer(5)
    buf.push(0)
    with pytest.raises(ValueError):
        buf.sample(2, np.random.default_rng(0))


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(8)
    nets = [DenseNetwork([3, 4, 2], rng=rng), DenseNetwork([2, 1], ["linear"], rng)]
    path = tmp_path / "p.bin"
    save_networks(path, nets)
    back = load_networks(path, [n.activations for n in nets])
    for a, b in zip(nets, back):
        assert a.sizes == b.sizes
        for p, q in zip(a.params, b.params):
            np.testing.assert_array_equal(p, q)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 5), st.integers(0, 2 ** 16))
def test_dense_output_shape(n_in, n_out, batch, seed):
    net = DenseNetwork([n_in, 4, n_out], rng=np.random.default_rng(seed))
    assert net.forward(np.zeros((batch, n_in))).shape == (batch, n_out)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 16), st.sampled_from(["tanh", "sigmoid", "linear"]))
def test_dense_gradients_match_differences(seed, act):
    rng = np.random.default_rng(seed)
    net = DenseNetwork([3, 5, 2], [act, "linear"], rng)
    assert check_model(net, rng.normal(size=(4, 3)), rng.normal(size=(4, 2))) < 1e-4


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 20), st.integers(1, 50))
def test_replay_never_exceeds_capacity(cap, n):
    buf = ReplayBuffer(cap)
    for i in range(n):
        buf.push(i)
    assert len(buf) == min(cap, n)
    assert buf.items() == list(range(max(0, n - cap), n))
