"""Layer forward semantics and the finite-difference gradient property."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ndcb.errors import ConfigurationError, DegenerateInputError
from ndcb.nn import (
    Conv2d,
    Dense,
    Flatten,
    L2Normalize,
    LeakyReLU,
    Network,
    ParamSet,
    Sigmoid,
    Upsample2x,
)
from ndcb.nn.gradcheck import TOLERANCE, run_suite


def test_identity_conv_preserves_image():
    net = Network([Conv2d(1, 1, k=3, pad=1)], (8, 8, 1))
    w = np.zeros((3, 3, 1, 1), dtype=np.float32)
    w[1, 1, 0, 0] = 1.0  # delta kernel
    params = ParamSet({"00_conv.weight": w, "00_conv.bias": np.zeros(1, dtype=np.float32)})
    x = np.random.default_rng(0).uniform(0, 1, (2, 8, 8, 1)).astype(np.float32)
    assert np.allclose(net.forward(params, x), x)


def test_identity_dense_preserves_input():
    net = Network([Dense(5, 5)], (5,))
    params = ParamSet(
        {"00_dense.weight": np.eye(5, dtype=np.float32), "00_dense.bias": np.zeros(5, dtype=np.float32)}
    )
    x = np.random.default_rng(1).normal(size=(3, 5)).astype(np.float32)
    assert np.allclose(net.forward(params, x), x)


@pytest.mark.parametrize(
    "x,slope,expected",
    [(-1.0, 0.01, -0.01), (2.0, 0.01, 2.0), (0.0, 0.5, 0.0)],
)
def test_leaky_relu_values(x, slope, expected):
    layer = LeakyReLU(slope)
    y, _ = layer.forward(np.array([x]), {}, None)
    assert y[0] == pytest.approx(expected)


def test_leaky_relu_rejects_bad_slope():
    with pytest.raises(ConfigurationError):
        LeakyReLU(1.0)


def test_l2_normalize_three_four():
    net = Network([L2Normalize()], (2,))
    y = net.forward(ParamSet({}), np.array([[3.0, 4.0]]))
    assert np.allclose(y, [[0.6, 0.8]])


def test_l2_normalize_idempotent_on_unit_vectors():
    net = Network([L2Normalize()], (3,))
    v = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])
    assert np.allclose(net.forward(ParamSet({}), v), v)


def test_l2_normalize_degenerate_input():
    net = Network([L2Normalize()], (3,))
    with pytest.raises(DegenerateInputError):
        net.forward(ParamSet({}), np.array([[1e-12, 0.0, 0.0]]))


@given(
    st.lists(
        st.floats(min_value=-100, max_value=100).filter(lambda v: abs(v) > 1e-3),
        min_size=2,
        max_size=8,
    )
)
@settings(max_examples=100, deadline=None)
def test_l2_normalize_output_norm_is_one(values):
    net = Network([L2Normalize()], (len(values),))
    y = net.forward(ParamSet({}), np.array([values], dtype=np.float64))
    assert abs(np.linalg.norm(y) - 1.0) < 1e-5


@given(st.integers(min_value=0, max_value=2**31 - 1))
@settings(max_examples=30, deadline=None)
def test_leaky_relu_is_max_formula(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=17)
    slope = float(rng.uniform(0, 0.99))
    y, _ = LeakyReLU(slope).forward(x, {}, None)
    assert np.allclose(y, np.maximum(x, slope * x))


def test_sigmoid_range_and_extremes():
    net = Network([Sigmoid()], (4,))
    x = np.array([[-500.0, -1.0, 1.0, 500.0]])
    y = net.forward(ParamSet({}), x)
    assert np.all(np.isfinite(y)) and np.all(y >= 0) and np.all(y <= 1)
    assert y[0, 0] < 1e-6 and y[0, 3] > 1 - 1e-6


def test_upsample_nearest_blocks():
    net = Network([Upsample2x()], (2, 2, 1))
    x = np.arange(4, dtype=np.float32).reshape(1, 2, 2, 1)
    y = net.forward(ParamSet({}), x)
    assert y.shape == (1, 4, 4, 1)
    assert np.allclose(y[0, :2, :2, 0], x[0, 0, 0, 0])


def test_flatten_roundtrip_shape():
    net = Network([Flatten(), Dense(12, 3)], (2, 2, 3))
    params = net.init_params(0)
    x = np.random.default_rng(2).normal(size=(5, 2, 2, 3)).astype(np.float32)
    assert net.forward(params, x).shape == (5, 3)


class TestGradientOracle:
    """Analytic gradients vs central finite differences, float64, h=1e-5."""

    def test_full_suite_passes(self):
        reports = run_suite(seed=0)
        assert len(reports) >= 20
        for rep in reports:
            assert rep.max_rel_err < TOLERANCE, f"{rep.op}: {rep.max_rel_err:.3e}"

    def test_suite_on_second_seed(self):
        reports = run_suite(seed=1234)
        assert all(r.max_rel_err < TOLERANCE for r in reports)

    def test_perturbed_gradient_is_caught(self):
        reports = run_suite(seed=0, perturb="dense")
        bad = [r for r in reports if r.op == "dense"]
        assert bad and any(r.max_rel_err >= TOLERANCE for r in bad)
