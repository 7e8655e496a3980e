"""Network container: shape checks, He init, determinism, backward plumbing."""

import numpy as np
import pytest

from ndcb.errors import ConfigurationError
from ndcb.nn import Conv2d, Dense, Flatten, LeakyReLU, Network
from ndcb.nn.network import validate_params


def test_incompatible_adjacent_layers_rejected():
    with pytest.raises(ConfigurationError):
        Network([Dense(5, 4), Dense(5, 2)], (5,))


def test_forward_rejects_wrong_input_shape():
    net = Network([Dense(5, 4)], (5,))
    params = net.init_params(0)
    with pytest.raises(ConfigurationError):
        net.forward(params, np.zeros((2, 6)))


def test_he_init_deterministic():
    net = Network([Flatten(), Dense(784, 64)], (28, 28, 1))
    a = net.init_params(7)
    b = net.init_params(7)
    for k in a.tensors:
        assert np.array_equal(a.tensors[k], b.tensors[k])
    assert a.seed == 7


def test_he_init_variance_and_zero_bias():
    net = Network([Flatten(), Dense(784, 512)], (28, 28, 1))
    params = net.init_params(3)
    w = params.tensors["01_dense.weight"]
    target = 2.0 / 784
    assert 0.8 * target <= w.var() <= 1.2 * target
    assert np.all(params.tensors["01_dense.bias"] == 0)


def test_he_init_conv_fan_in():
    net = Network([Conv2d(32, 16, k=3)], (8, 8, 32))
    w = net.init_params(5).tensors["00_conv.weight"]
    target = 2.0 / (3 * 3 * 32)
    assert 0.8 * target <= w.var() <= 1.2 * target


def test_forward_deterministic_bitwise():
    net = Network([Flatten(), Dense(64, 32), LeakyReLU(0.01), Dense(32, 8)], (8, 8, 1))
    params = net.init_params(11)
    x = np.random.default_rng(0).uniform(0, 1, (4, 8, 8, 1)).astype(np.float32)
    y1 = net.forward(params, x)
    y2 = net.forward(params, x)
    assert np.array_equal(y1, y2)


def test_forward_no_nan_inf_on_finite_input():
    net = Network([Flatten(), Dense(64, 32), LeakyReLU(0.01)], (8, 8, 1))
    params = net.init_params(2)
    x = np.random.default_rng(1).uniform(0, 1, (3, 8, 8, 1)).astype(np.float32)
    assert np.all(np.isfinite(net.forward(params, x)))


def test_backward_zero_loss_gradient_gives_zero_grads():
    net = Network([Dense(6, 4), LeakyReLU(0.01)], (6,))
    params = net.init_params(0)
    x = np.random.default_rng(3).normal(size=(2, 6)).astype(np.float32)
    _, tape = net.forward(params, x, record_tape=True)
    grads, dx = net.backward(tape, np.zeros((2, 4), dtype=np.float32))
    assert all(np.all(g == 0) for g in grads.values())
    assert np.all(dx == 0)


def test_backward_sum_loss_dense_bias_grads_are_batch_count():
    # loss = sum of outputs: bias gradient is exactly the batch size.
    net = Network([Dense(3, 2)], (3,))
    params = net.init_params(0)
    x = np.random.default_rng(4).normal(size=(5, 3)).astype(np.float32)
    _, tape = net.forward(params, x, record_tape=True)
    grads, _ = net.backward(tape, np.ones((5, 2), dtype=np.float32))
    assert np.allclose(grads["00_dense.bias"], 5.0)


def test_backward_rejects_wrong_grad_shape():
    net = Network([Dense(3, 2)], (3,))
    params = net.init_params(0)
    _, tape = net.forward(params, np.zeros((1, 3), dtype=np.float32), record_tape=True)
    with pytest.raises(ConfigurationError):
        net.backward(tape, np.zeros((1, 5), dtype=np.float32))


def test_validate_params_shape_mismatch():
    net = Network([Dense(3, 2)], (3,))
    other = Network([Dense(4, 2)], (4,))
    with pytest.raises(ConfigurationError):
        validate_params(net, other.init_params(0))
