"""SGD update rule and polynomial LR schedule."""

import numpy as np
import pytest

from structseg.optim import make_velocity, poly_lr, sgd_step
from structseg.tensor import Tensor


def _param(values):
    p = Tensor(np.asarray(values, dtype=np.float64), requires_grad=True)
    return p


class TestSgdStep:
    def test_plain_gradient_descent(self):
        p = _param([1.0, 2.0])
        g = np.array([0.3, -0.7])
        p.grad = g.copy()
        v = make_velocity([p])
        sgd_step([p], lr=1.0, momentum=0.0, weight_decay=0.0, velocity=v)
        np.testing.assert_array_equal(p.data, np.array([1.0, 2.0]) - g)

    def test_two_step_momentum_recurrence(self):
        # hand-unrolled: v1 = g, v2 = 0.9 g + g, total displacement lr * 2.9 g
        lr, g = 0.01, np.array([2.0])
        p = _param([5.0])
        v = make_velocity([p])
        for _ in range(2):
            p.grad = g.copy()
            sgd_step([p], lr=lr, momentum=0.9, weight_decay=0.0, velocity=v)
        np.testing.assert_allclose(p.data, 5.0 - lr * 2.9 * g, rtol=0, atol=1e-15)

    def test_decay_only_update(self):
        p = _param([1.0])
        p.grad = np.array([0.0])
        v = make_velocity([p])
        sgd_step([p], lr=0.002, momentum=0.0, weight_decay=0.001, velocity=v)
        np.testing.assert_allclose(p.data, [1.0 - 0.002 * 0.001], rtol=0, atol=0)

    def test_grads_zeroed_after_step(self):
        p = _param([1.0])
        p.grad = np.array([1.0])
        sgd_step([p], 0.1, 0.0, 0.0, make_velocity([p]))
        assert p.grad is None

    def test_missing_grad_errors(self):
        p = _param([1.0])
        with pytest.raises(ValueError, match="no gradient"):
            sgd_step([p], 0.1, 0.9, 0.0, make_velocity([p]))

    def test_update_is_in_place(self):
        p = _param([1.0])
        arr = p.data
        p.grad = np.array([1.0])
        sgd_step([p], 0.1, 0.0, 0.0, make_velocity([p]))
        assert p.data is arr


class TestPolyLr:
    def test_initial_value(self):
        assert poly_lr(0, 100, 0.002, 1.0) == 0.002

    def test_endpoint_is_zero(self):
        assert poly_lr(100, 100, 0.002, 1.0) == 0.0

    def test_linear_midpoint(self):
        assert poly_lr(50, 100, 0.002, 1.0) == pytest.approx(0.001, abs=1e-18)

    def test_power_curvature(self):
        assert poly_lr(50, 100, 1.0, 2.0) == pytest.approx(0.25)

    def test_step_beyond_budget_errors(self):
        with pytest.raises(ValueError):
            poly_lr(101, 100, 0.002, 1.0)
        with pytest.raises(ValueError):
            poly_lr(-1, 100, 0.002, 1.0)
        with pytest.raises(ValueError):
            poly_lr(0, 0, 0.002, 1.0)
