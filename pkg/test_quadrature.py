#!/usr/bin/env python3
"""
Exactness of the reference triangle and interval rules.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from utils.quadrature_utils import QuadratureError, QuadratureFactory, check_rule, monomial_integral


@pytest.mark.parametrize("degree", range(0, 21))
def test_triangle_rule_exact_up_to_degree(degree):
    rule = QuadratureFactory.triangle(degree)
    worst, where = check_rule(rule)
    assert worst < 1e-12, f"degree {degree}: error {worst:.2e} at x^{where[0]} y^{where[1]}"


@pytest.mark.parametrize("degree", [0, 1, 5, 12, 30])
def test_triangle_weights_sum_to_area(degree):
    rule = QuadratureFactory.triangle(degree)
    assert math.isclose(rule.weights.sum(), 0.5, rel_tol=1e-14)
    assert np.all(rule.points >= 0.0)
    assert np.all(rule.points.sum(axis=1) <= 1.0)


@given(st.integers(min_value=0, max_value=25))
@settings(max_examples=20, deadline=None)
def test_interval_rule_exact(degree):
    rule = QuadratureFactory.interval(degree)
    for p in range(rule.exactness_degree + 1):
        assert math.isclose(np.dot(rule.weights, rule.points**p), 1.0 / (p + 1), rel_tol=1e-12)


def test_monomial_integral():
    assert monomial_integral(0, 0) == 0.5
    assert math.isclose(monomial_integral(1, 0), 1.0 / 6.0)
    assert math.isclose(monomial_integral(1, 1), 1.0 / 24.0)


@pytest.mark.parametrize("degree", [-1, QuadratureFactory.MAX_DEGREE + 1])
def test_out_of_range_degree_raises(degree):
    with pytest.raises(QuadratureError):
        QuadratureFactory.triangle(degree)
    with pytest.raises(QuadratureError):
        QuadratureFactory.interval(degree)


if __name__ == "__main__":
    pytest.main([__file__])
