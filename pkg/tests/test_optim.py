import numpy as np
import pytest

from sketchdiff import autodiff as ad
from sketchdiff.optim import OptimizerState, optimizer_step


def _params(value=1.0):
    return {"p": ad.parameter(np.array(value), "p")}


def test_zero_gradient_leaves_parameters_unchanged():
    params = _params(0.7)
    state = OptimizerState(lr=0.1)
    optimizer_step(params, {"p": np.array(0.0)}, state)
    assert params["p"].value == 0.7


def test_first_step_magnitude_equals_learning_rate():
    # hand-computed: m_hat = v_hat = 1 after bias correction, so the update
    # is -lr * 1 / (1 + eps)
    params = _params(1.0)
    state = OptimizerState(lr=0.1)
    optimizer_step(params, {"p": np.array(1.0)}, state)
    expected = 1.0 - 0.1 * 1.0 / (1.0 + state.eps)
    assert params["p"].value == pytest.approx(expected, abs=1e-15)
    assert params["p"].value == pytest.approx(0.9, abs=1e-8)


def test_second_identical_gradient_step_within_ten_percent():
    # hand-computed step 2: m = 0.19, v = 0.001999, bias corrections
    # 1-0.9^2 = 0.19 and 1-0.999^2 = 0.001999 give m_hat = v_hat = 1 again
    params = _params(1.0)
    state = OptimizerState(lr=0.1)
    optimizer_step(params, {"p": np.array(1.0)}, state)
    step1 = 1.0 - float(params["p"].value)
    before = float(params["p"].value)
    optimizer_step(params, {"p": np.array(1.0)}, state)
    step2 = before - float(params["p"].value)
    assert abs(step2 - step1) <= 0.1 * step1


def test_missing_gradient_rejected():
    params = {"a": ad.parameter(1.0, "a"), "b": ad.parameter(2.0, "b")}
    with pytest.raises(ValueError, match="b"):
        optimizer_step(params, {"a": np.array(1.0)}, OptimizerState())


def test_step_counter_strictly_increases_and_update_deterministic():
    params = _params(1.0)
    state = OptimizerState(lr=0.01)
    seen = []
    for _ in range(3):
        optimizer_step(params, {"p": np.array(0.5)}, state)
        seen.append(state.step)
    assert seen == [1, 2, 3]

    params2 = _params(1.0)
    state2 = OptimizerState(lr=0.01)
    for _ in range(3):
        optimizer_step(params2, {"p": np.array(0.5)}, state2)
    assert params["p"].value == params2["p"].value


def test_moment_shapes_match_parameters():
    params = {"w": ad.parameter(np.ones((3, 2)), "w")}
    state = OptimizerState()
    optimizer_step(params, {"w": np.full((3, 2), 0.1)}, state)
    assert state.m["w"].shape == (3, 2) and state.v["w"].shape == (3, 2)
    with pytest.raises(ValueError, match="shape"):
        optimizer_step(params, {"w": np.ones(6)}, state)
