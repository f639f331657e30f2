#!/usr/bin/env python3
"""
Algebraic properties of the variational forms and the force functional.
"""

import math

import numpy as np
import pytest

from utils.form_utils import (
    DiscreteField,
    FluidParams,
    cell_integrator,
    divergence_matrix,
    forcing_functional,
    forcing_vector,
    form_a,
    form_a_prime,
    form_b,
    form_b_prime,
    form_c_cf,
    form_c_conv,
    form_c_div,
    form_c_upw,
    form_j_gd,
    graddiv_matrix,
    mass_matrix,
    pressure_mean_vector,
    quadrature_degree,
    viscous_matrix,
)
from utils.functional_utils import drag_lift_boundary
from utils.mesh_utils import hexagon_mesh
from utils.space_utils import BDMSpace, DGSpace, H1Space, StressSpace, VectorH1Space

RNG = np.random.default_rng(7)


def zero_data(x, marker):
    return np.zeros((len(x), 2))


def constant_flow(x):
    return np.tile([1.0, 0.3], (len(x), 1))


@pytest.fixture(scope="module")
def mesh():
    return hexagon_mesh(3)


def random_field(space, zero_boundary=False):
    coeffs = RNG.standard_normal(space.n_dofs)
    if zero_boundary:
        coeffs[space.boundary_dofs(["walls"])] = 0.0
    return DiscreteField(space, coeffs)


def test_quadrature_degree():
    assert quadrature_degree(2) == 6
    assert quadrature_degree(4) == 11


def test_fluid_params():
    fluid = FluidParams.from_reynolds(100.0)
    assert fluid.nu == pytest.approx(0.02)
    assert fluid.epsilon_mcs == pytest.approx(1e-12 / 0.02)
    with pytest.raises(ValueError):
        FluidParams(nu=-1.0)


def test_c_div_is_skew_for_zero_boundary_test_function(mesh):
    V = VectorH1Space(mesh, 2)
    u = random_field(V)
    v = random_field(V, zero_boundary=True)
    value, scale = form_c_div(u, v, v, with_scale=True)
    assert abs(value) < 1e-12 * scale


def rotating_flow(x):
    return np.stack([-x[:, 1], x[:, 0]], axis=1)


@pytest.mark.parametrize("flow", [constant_flow, rotating_flow])
def test_upwind_flux_is_dissipative(mesh, flow):
    V = BDMSpace(mesh, 2)
    u = DiscreteField(V, V.interpolate(flow))
    for _ in range(3):
        v = random_field(V)
        value, scale = form_c_upw(u, v, v, zero_data, with_scale=True)
        assert value >= -1e-12 * scale


def test_upwind_form_reduces_to_convective_form_on_continuous_fields(mesh):
    V = VectorH1Space(mesh, 2)
    u = DiscreteField(V, V.interpolate(rotating_flow))
    v, w = random_field(V), random_field(V)
    upwind, scale = form_c_upw(u, v, w, with_scale=True)
    assert upwind == pytest.approx(form_c_conv(u, v, w), abs=1e-11 * scale)


def test_central_flux_conserves_energy(mesh):
    V = BDMSpace(mesh, 2)
    u = DiscreteField(V, V.interpolate(constant_flow))
    v = random_field(V)
    value, scale = form_c_cf(u, v, v, zero_data, with_scale=True)
    assert abs(value) < 1e-11 * scale


def test_b_prime_does_not_depend_on_normal_orientation(mesh):
    tau = random_field(StressSpace(mesh, 1))
    u = random_field(BDMSpace(mesh, 2))
    value, scale = form_b_prime(tau, u, with_scale=True)
    flipped = form_b_prime(tau, u, flip_normals=True)
    assert abs(value - flipped) < 1e-12 * scale


def test_a_prime_of_constant_deviatoric_stress(mesh):
    S = StressSpace(mesh, 1)
    sigma = DiscreteField(S, S.interpolate(lambda x: np.tile([[1.0, 2.0], [2.0, -1.0]], (len(x), 1, 1))))
    area = 1.5 * math.sqrt(3.0)
    assert form_a_prime(sigma, sigma, 0.5) == pytest.approx(10.0 / 0.5 * area, rel=1e-12)
    tau = random_field(S)
    assert form_a_prime(sigma, tau, 0.5) == pytest.approx(form_a_prime(tau, sigma, 0.5), rel=1e-12)


def test_forcing_vector_matches_forcing_functional(mesh):
    V = BDMSpace(mesh, 2)
    forcing = lambda x: np.stack([np.sin(x[:, 0]), np.cos(x[:, 1])], axis=1)
    w = random_field(V)
    f = forcing_vector(cell_integrator(mesh, 6), V, forcing)
    assert w.coeffs @ f == pytest.approx(forcing_functional(forcing, w), rel=1e-10)


def test_viscous_matrix_matches_form_a(mesh):
    V = VectorH1Space(mesh, 2)
    nu = 0.05
    A = viscous_matrix(cell_integrator(mesh, 6), V, nu)
    v, w = random_field(V), random_field(V)
    assert abs(A - A.T).max() < 1e-12
    assert w.coeffs @ A @ v.coeffs == pytest.approx(form_a(v, w, nu), rel=1e-10)
    assert form_a(v, w, nu) == pytest.approx(form_a(w, v, nu), rel=1e-12)


def test_divergence_matrix_matches_form_b(mesh):
    V, Q = BDMSpace(mesh, 2), DGSpace(mesh, 1, piola=True)
    B = divergence_matrix(cell_integrator(mesh, 6), V, Q)
    u, q = random_field(V), random_field(Q)
    assert q.coeffs @ B @ u.coeffs == pytest.approx(form_b(u, q), rel=1e-10)
    G = graddiv_matrix(cell_integrator(mesh, 6), V, 10.0)
    assert u.coeffs @ G @ u.coeffs == pytest.approx(form_j_gd(u, u, 10.0), rel=1e-10)


def test_mass_and_mean_vectors_integrate_area(mesh):
    area = 1.5 * math.sqrt(3.0)
    S = H1Space(mesh, 3)
    integ = cell_integrator(mesh, 8)
    ones = np.ones(S.n_dofs)
    assert ones @ mass_matrix(integ, S) @ ones == pytest.approx(area, rel=1e-12)
    assert pressure_mean_vector(integ, S).sum() == pytest.approx(area, rel=1e-12)


def test_bdm_interpolant_of_constant_is_divergence_free(mesh):
    V = BDMSpace(mesh, 3)
    u = DiscreteField(V, V.interpolate(constant_flow))
    assert form_j_gd(u, u, 1.0) < 1e-24


def test_pressure_drag_of_linear_pressure(cylinder_mesh):
    V = VectorH1Space(cylinder_mesh, 2)
    Q = H1Space(cylinder_mesh, 4)
    p = Q.interpolate(lambda x: x[:, 0])
    forces = drag_lift_boundary(V, np.zeros(V.n_dofs), Q, p, nu=0.01)
    drag_v, drag_p = forces["drag"]
    lift_v, lift_p = forces["lift"]
    assert drag_p == pytest.approx(-math.pi, rel=1e-5)
    assert abs(lift_p) < 1e-8
    assert drag_v == 0.0 and lift_v == 0.0


if __name__ == "__main__":
    pytest.main([__file__])
