import numpy as np
import pytest

from competing_ate.stepfunction import StepFunction


def test_right_continuous_and_left_limit():
    f = StepFunction([1.0, 2.0], [0.5, 0.25])
    assert f(0.999) == 0.0
    assert f(1.0) == 0.5
    assert f.left_value(1.0) == 0.0
    assert f.left_value(2.0) == 0.5
    assert f(10) == 0.75
    np.testing.assert_allclose(f([0, 1, 1.5, 2]), [0, 0.5, 0.5, 0.75])


def test_from_values_roundtrip():
    f = StepFunction.from_values([1, 3, 4], [0.2, 0.2, 0.9])
    np.testing.assert_allclose(f.increments, [0.2, 0.0, 0.7])
    np.testing.assert_allclose(f.values, [0.2, 0.2, 0.9])
    assert f.is_nondecreasing()


def test_rejects_unsorted_times():
    with pytest.raises(ValueError):
        StepFunction([2.0, 1.0], [0.1, 0.1])


def test_zero_and_scale():
    assert StepFunction.zero()(5.0) == 0.0
    assert StepFunction([1.0], [0.3]).scale(2.0)(1.0) == pytest.approx(0.6)
