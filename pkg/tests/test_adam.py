import numpy as np
import pytest

import oracles
from fldnet import tensor as T
from fldnet.nn import Parameter
from fldnet.optim import Adam, AdamState, adam_step
from fldnet.tensor import precision


def test_zero_gradient_leaves_parameter_but_advances_t():
    p = Parameter(np.array([1.5, -2.0]), name="p")
    opt = Adam([p])
    opt.step(1e-3)
    np.testing.assert_array_equal(p.data, [1.5, -2.0])
    assert opt.state.t == 1


def test_first_step_moves_by_lr():
    # bias correction makes the first step lr * sign(g) up to eps
    p = Parameter(np.array([0.0, 0.0, 0.0]), name="p")
    opt = Adam([p])
    p.grad = np.array([3.0, -0.01, 250.0])
    opt.step(1e-2)
    np.testing.assert_allclose(p.data, [-1e-2, 1e-2, -1e-2], rtol=1e-5)


def test_quadratic_trajectory_matches_oracle():
    with precision(64):
        w = Parameter(np.array([1.0]), name="w")
        opt = Adam([w])
        got = []
        for _ in range(3):
            T.sum(w * w).backward()
            opt.step(0.1)
            got.append(w.data[0])
    expected = oracles.adam_trajectory(1.0, lambda v: 2 * v, 0.1, 3)
    np.testing.assert_allclose(got, expected, rtol=0, atol=1e-7)


def test_gradients_are_zeroed_after_step():
    p = Parameter(np.ones(2), name="p")
    opt = Adam([p])
    T.sum(p * p).backward()
    opt.step(0.1)
    assert not p.grad.any()


def test_nan_gradient_names_parameter():
    a = Parameter(np.ones(2), name="encoder.w")
    b = Parameter(np.ones(2), name="head.bias")
    opt = Adam([a, b])
    b.grad = np.array([0.0, np.nan])
    with pytest.raises(FloatingPointError, match="head.bias"):
        opt.step(0.1)
    # nothing was applied
    np.testing.assert_array_equal(a.data, 1.0)
    assert opt.state.t == 0


def test_duplicate_names_rejected():
    with pytest.raises(ValueError):
        Adam([Parameter(np.ones(1), name="x"), Parameter(np.ones(1), name="x")])


def test_functional_form_matches_class():
    with precision(64):
        a = Parameter(np.array([0.3, -1.2]), name="a")
        b = Parameter(np.array([0.3, -1.2]), name="a")
        opt = Adam([a])
        state = AdamState()
        for _ in range(4):
            T.sum(a * a * a).backward()
            opt.step(0.05)
            T.sum(b * b * b).backward()
            adam_step([b], state, 0.05)
        np.testing.assert_array_equal(a.data, b.data)
        assert state.t == opt.state.t == 4
