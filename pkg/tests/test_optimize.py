import numpy as np
import pytest

from ivconformal.errors import DivergenceError
from ivconformal.numkit import adam_minimize


def test_quadratic_reaches_minimum():
    target = np.array([1.5, -2.0, 0.25])

    def grad(x):
        return 2.0 * (x - target)

    x = adam_minimize(grad, np.zeros(3), steps=800, lr=0.05)
    assert np.allclose(x, target, atol=1e-3)


def test_deterministic_given_same_inputs():
    def grad(x):
        return np.sin(x) + 0.1 * x

    a = adam_minimize(grad, np.ones(4), steps=100, lr=0.02)
    b = adam_minimize(grad, np.ones(4), steps=100, lr=0.02)
    assert np.array_equal(a, b)


def test_divergence_reports_step():
    def grad(x):
        return np.full_like(x, np.nan)

    with pytest.raises(DivergenceError) as exc:
        adam_minimize(grad, np.zeros(2), steps=10, lr=0.1)
    assert exc.value.step == 1  # steps are reported 1-based


def test_ill_scaled_problem_still_converges():
    # Adam's per-coordinate scaling should handle a 1e4 condition number.
    scales = np.array([1.0, 100.0])

    def grad(x):
        return 2.0 * scales**2 * x

    x = adam_minimize(grad, np.array([3.0, 3.0]), steps=2000, lr=0.05)
    assert np.all(np.abs(x) < 1e-2)
