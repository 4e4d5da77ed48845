import numpy as np
import pytest

from hyperinr import AdamState, NumericError, adam_step


def test_zero_gradient_leaves_params_unchanged():
    state = AdamState.zeros(4)
    p = np.array([1.0, -2.0, 3.0, 0.5])
    out = adam_step(p, np.zeros(4), state, lr=0.1)
    assert np.array_equal(out, p)
    assert state.step == 1


def test_step_one_identity():
    # with g=1 the bias-corrected ratio is 1, so the step is -lr/(1+eps)
    state = AdamState.zeros(1)
    out = adam_step(np.array([0.0]), np.array([1.0]), state, lr=0.1)
    assert out[0] == pytest.approx(-0.1, rel=1e-7)


def test_hundred_steps_on_quadratic():
    # oracle loop: minimize f(x) = x^2 from x=1 with lr 0.1
    state = AdamState.zeros(1)
    x = np.array([1.0])
    for _ in range(100):
        x = adam_step(x, 2.0 * x, state, lr=0.1)
    assert abs(x[0]) < 0.05


def test_non_finite_gradient_names_block():
    state = AdamState.zeros(2)
    with pytest.raises(NumericError, match="latent-3"):
        adam_step(np.zeros(2), np.array([np.nan, 0.0]), state, lr=0.1, block="latent-3")


def test_moment_buffers_track_direction():
    state = AdamState.zeros(1)
    p = np.array([0.0])
    for _ in range(10):
        p = adam_step(p, np.array([1.0]), state, lr=0.01)
    assert p[0] == pytest.approx(-0.1, abs=1e-6)
    assert state.step == 10
