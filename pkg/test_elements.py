#!/usr/bin/env python3
"""
Reference elements: Lagrange, BDM and trace-free stress bases.
"""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from utils.element_utils import (
    EDGE_VERTICES,
    REF_VERTICES,
    ElementError,
    bdm_element,
    edge_normal_sign,
    eval_basis,
    lagrange_element,
    stress_element,
)
from utils.quadrature_utils import QuadratureFactory

reference_points = st.tuples(
    st.floats(min_value=0.0, max_value=1.0), st.floats(min_value=0.0, max_value=1.0)
).map(lambda p: (p[0] * (1.0 - p[1]), p[1]))


@given(reference_points, st.integers(min_value=1, max_value=6))
@settings(max_examples=40, deadline=None)
def test_lagrange_partition_of_unity(point, order):
    values, grads, _ = lagrange_element(order).tabulate(np.array([point]))
    assert abs(values.sum() - 1.0) < 1e-10
    assert np.allclose(grads.sum(axis=1), 0.0, atol=1e-8)


@pytest.mark.parametrize("order", range(0, 7))
def test_lagrange_nodal_basis(order):
    element = lagrange_element(order)
    values, _, _ = element.tabulate(element.nodes, derivatives=0)
    assert element.dim == (order + 1) * (order + 2) // 2
    assert np.allclose(values, np.eye(element.dim), atol=1e-10)


@pytest.mark.parametrize("order", range(1, 6))
def test_bdm_functionals_are_dual(order):
    element = bdm_element(order)
    values, _, _ = element.tabulate(element.functional_points)
    moments = element.apply_functionals(np.moveaxis(values, 1, 0))
    assert element.dim == (order + 1) * (order + 2)
    assert np.allclose(moments, np.eye(element.dim), atol=1e-9)


@pytest.mark.parametrize("order", [1, 3, 4])
def test_bdm_edge_basis_has_no_normal_trace_on_other_edges(order):
    element = bdm_element(order)
    s = QuadratureFactory.interval(2 * order).points
    for e, (a, b) in enumerate(EDGE_VERTICES):
        t = REF_VERTICES[b] - REF_VERTICES[a]
        normal = np.array([t[1], -t[0]])
        points = REF_VERTICES[a] + np.outer(s, t)
        values, _, _ = element.tabulate(points)
        normal_trace = np.einsum("pja,a->pj", values, normal)
        others = [j for f in range(3) if f != e for j in element.edge_dofs[f]] + element.interior_dofs
        assert np.allclose(normal_trace[:, others], 0.0, atol=1e-10)


@pytest.mark.parametrize("order", [1, 2, 3])
def test_bdm_divergence_matches_gradient_trace(order):
    values, grads, div = bdm_element(order).tabulate(np.array([[0.2, 0.3], [0.6, 0.1]]))
    assert np.allclose(div, np.trace(grads, axis1=2, axis2=3))


@pytest.mark.parametrize("order", [0, 2, 4])
def test_stress_basis_is_trace_free(order):
    element = stress_element(order)
    values, _ = element.tabulate(np.array([[0.1, 0.2], [0.5, 0.25], [0.0, 1.0]]))
    assert values.shape[1:] == (element.dim, 2, 2)
    assert np.allclose(np.trace(values, axis1=2, axis2=3), 0.0)


def test_edge_normal_sign():
    assert np.array_equal(edge_normal_sign(3, True), np.ones(4))
    assert np.array_equal(edge_normal_sign(3, False), np.array([-1.0, 1.0, -1.0, 1.0]))


def test_eval_basis_families():
    points = np.array([[0.25, 0.25]])
    (values,) = eval_basis("Lagrange", 2, points)
    assert values.shape == (1, 6)
    values, grads = eval_basis("BDM", 2, points, derivative_order=1)
    assert values.shape == (1, 12, 2) and grads.shape == (1, 12, 2, 2)
    with pytest.raises(ElementError):
        eval_basis("Nedelec", 1, points)


def test_invalid_orders():
    with pytest.raises(ElementError):
        lagrange_element(-1)
    with pytest.raises(ElementError):
        bdm_element(0)
    with pytest.raises(ElementError):
        stress_element(-2)


if __name__ == "__main__":
    pytest.main([__file__])
