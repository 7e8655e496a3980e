"""Adam update rule: bias correction and limiting behaviour."""

import numpy as np
import pytest

from ndcb.errors import ConfigurationError
from ndcb.nn import AdamState, adam_step, ParamSet


def _scalar_params(value: float) -> ParamSet:
    return ParamSet({"w": np.array([value], dtype=np.float64)})


def test_zero_gradient_leaves_params_unchanged():
    params = _scalar_params(1.5)
    state = AdamState.for_params(params, lr=1e-3)
    adam_step(params, {"w": np.zeros(1)}, state)
    assert params.tensors["w"][0] == 1.5
    assert state.t == 1


def test_single_step_matches_hand_computation():
    # w=1, g=1, lr=1e-4: bias-corrected m_hat = v_hat = 1, so w -> 1 - 1e-4/(1+eps)
    params = _scalar_params(1.0)
    state = AdamState.for_params(params, lr=1e-4)
    adam_step(params, {"w": np.ones(1)}, state)
    expected = 1.0 - 1e-4 * 1.0 / (1.0 + state.eps)
    assert params.tensors["w"][0] == pytest.approx(expected, abs=1e-12)


def test_constant_gradient_step_approaches_lr_sign():
    lr = 1e-3
    params = ParamSet({"w": np.array([0.0, 0.0], dtype=np.float64)})
    state = AdamState.for_params(params, lr=lr)
    g = np.array([0.37, -2.4])
    prev = params.tensors["w"].copy()
    for _ in range(4000):
        prev = params.tensors["w"].copy()
        adam_step(params, {"w": g.copy()}, state)
    step = params.tensors["w"] - prev
    assert np.allclose(np.abs(step), lr, rtol=1e-3)
    assert np.all(np.sign(step) == -np.sign(g))


def test_moments_start_at_zero_and_t_counts():
    params = _scalar_params(0.0)
    state = AdamState.for_params(params, lr=1e-3)
    assert state.t == 0
    assert np.all(state.m["w"] == 0) and np.all(state.v["w"] == 0)
    for i in range(3):
        adam_step(params, {"w": np.ones(1)}, state)
    assert state.t == 3


def test_mismatched_gradient_names_rejected():
    params = _scalar_params(0.0)
    state = AdamState.for_params(params, lr=1e-3)
    with pytest.raises(ConfigurationError):
        adam_step(params, {"nope": np.ones(1)}, state)


def test_mismatched_gradient_shape_rejected():
    params = _scalar_params(0.0)
    state = AdamState.for_params(params, lr=1e-3)
    with pytest.raises(ConfigurationError):
        adam_step(params, {"w": np.ones(3)}, state)
