#!/usr/bin/env python3
"""
Scheme behaviour on small structured meshes: time accuracy, pressure
robustness, grad-div limit, restart reproducibility and spatial convergence.
"""

import math

import numpy as np
import pytest

from utils.checkpoint_utils import Checkpointer, checkpoint_path, load_checkpoint, restore_scheme
from utils.form_utils import FluidParams, cell_integrator
from utils.hdiv_dg_utils import HdivDGScheme
from utils.mesh_utils import Mesh, hexagon_mesh
from utils.scheme_utils import (
    CrankNicolsonScheme,
    FlowProblem,
    NonlinearSolverParams,
    SchemeConfig,
    SchemeError,
    create_scheme,
    dirichlet_condition,
    run_scheme,
)


def no_slip(x, t, marker):
    return np.zeros((len(x), 2))


def swirl(x, t):
    return 5.0 * math.sin(2.0 * t) * np.stack([-x[:, 1], x[:, 0]], axis=1)


def make_config(scheme, order, dt=0.05, nu=0.1, eps_elimination=True, **fluid):
    return SchemeConfig(
        scheme=scheme,
        order=order,
        dt=dt,
        fluid=FluidParams(nu=nu, **fluid),
        newton=NonlinearSolverParams(residual_tol=1e-11),
        eps_elimination=eps_elimination,
    )


def l2_norm(space, coeffs, exact=None, degree=None):
    integ = cell_integrator(space.mesh, degree or 2 * space.order + 4)

    def fn(chunk, i):
        values, _, _ = integ.field(space, coeffs, i)
        if exact is not None:
            values = values - np.asarray(exact(chunk.geo.x.reshape(-1, 2))).reshape(values.shape)
        return values**2 if values.ndim == 2 else np.sum(values**2, axis=-1)

    total, _ = integ.integrate(fn)
    return math.sqrt(total)


@pytest.fixture(scope="module")
def mesh():
    return hexagon_mesh(2)


def final_velocity(mesh, scheme, order, dt, t_end=0.8, eps_elimination=True):
    problem = FlowProblem(velocity=no_slip, forcing=swirl)
    config = make_config(scheme, order, dt=dt, eps_elimination=eps_elimination, epsilon_mcs=1e-8)
    solver = create_scheme(config, mesh, problem)
    state = run_scheme(solver, solver.initialize(), t_end)
    return state.u


@pytest.mark.parametrize("scheme, eps_elimination", [("TH", True), ("MCS_cf", True), ("MCS_cf", False)])
def test_second_order_in_time(mesh, scheme, eps_elimination):
    reference = final_velocity(mesh, scheme, 2, 0.00625, eps_elimination=eps_elimination)
    errors = [
        np.linalg.norm(final_velocity(mesh, scheme, 2, dt, eps_elimination=eps_elimination) - reference)
        for dt in (0.1, 0.05, 0.025)
    ]
    rates = [math.log2(errors[i] / errors[i + 1]) for i in range(2)]
    assert min(rates) > 1.7, f"{scheme}: errors {errors}, rates {rates}"


def test_create_scheme_dispatch(mesh):
    assert isinstance(create_scheme(make_config("TH", 2), mesh), CrankNicolsonScheme)
    assert isinstance(create_scheme(make_config("MCS", 2), mesh), HdivDGScheme)


def test_invalid_orders_rejected():
    with pytest.raises(ValueError):
        make_config("TH", 1)
    with pytest.raises(ValueError):
        make_config("SV", 3)


def test_sv_rejects_singular_vertices():
    vertices = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.5, 0.5]])
    cells = np.array([[0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4]])
    with pytest.raises(SchemeError):
        create_scheme(make_config("SV", 4), Mesh(vertices, cells))


def gradient_forcing(x, t):
    # grad of x^5 + y^5
    return 5.0 * x**4


def stokes_velocity_norm(mesh, scheme, order, eps_elimination=True, **fluid):
    problem = FlowProblem(velocity=no_slip, forcing=gradient_forcing, convection=False)
    config = make_config(scheme, order, nu=1e-3, eps_elimination=eps_elimination, **fluid)
    solver = create_scheme(config, mesh, problem)
    state = solver.steady_solve(convection=False)
    return l2_norm(solver.velocity_space, state.u)


def test_pressure_robustness(mesh):
    sv = stokes_velocity_norm(mesh, "SV", 4)
    assert sv < 1e-8
    assert stokes_velocity_norm(mesh, "TH", 2) > 1e-6
    # same polynomial degree, only the pressure space differs
    assert stokes_velocity_norm(mesh, "TH", 4) >= 1e3 * sv


@pytest.mark.parametrize("eps_elimination", [True, False])
def test_mcs_pressure_robustness(mesh, eps_elimination):
    assert stokes_velocity_norm(mesh, "MCS", 2, eps_elimination=eps_elimination, epsilon_mcs=1e-10) < 1e-6


def test_grad_div_approaches_divergence_free_limit(mesh):
    norms = [stokes_velocity_norm(mesh, "gdTH", 2, gamma_gd=g) for g in (1e1, 1e3, 1e5)]
    assert norms[0] > norms[1] > norms[2]
    assert norms[2] < 1e-2 * stokes_velocity_norm(mesh, "TH", 2)


def test_momentum_residual_vanishes_on_free_dofs(mesh):
    problem = FlowProblem(velocity=no_slip, forcing=swirl)
    solver = create_scheme(make_config("TH", 2), mesh, problem)
    state = run_scheme(solver, solver.initialize(), 0.1)
    r = solver.momentum_residual(state)
    free = np.setdiff1d(np.arange(len(r)), dirichlet_condition(solver.velocity_space, problem, state.t).dofs)
    scale = np.linalg.norm(solver.M @ state.u) / solver.dt
    assert np.linalg.norm(r[free]) < 1e-8 * scale


@pytest.mark.parametrize("scheme, eps_elimination", [("TH", True), ("MCS", True), ("MCS", False)])
def test_restart_is_bit_exact(mesh, scheme, eps_elimination, tmp_path):
    problem = FlowProblem(velocity=no_slip, forcing=swirl)
    config = make_config(scheme, 2, eps_elimination=eps_elimination)

    first = create_scheme(config, mesh, problem)
    checkpointer = Checkpointer(tmp_path, "run-hash", every=3, keep=3)
    straight = run_scheme(first, first.initialize(), 0.3, [checkpointer])

    second = create_scheme(config, mesh, problem)
    checkpoint = load_checkpoint(checkpoint_path(tmp_path, 3), expected_hash="run-hash")
    resumed = run_scheme(second, restore_scheme(second, checkpoint), 0.3)

    assert resumed.step == straight.step == 6
    assert np.array_equal(resumed.u, straight.u)
    assert np.array_equal(resumed.p, straight.p)


def test_eps_elimination_matches_saddle_point(mesh):
    problem = FlowProblem(velocity=no_slip, forcing=swirl)
    states = []
    for eps_elimination in (True, False):
        solver = create_scheme(make_config("MCS", 2, eps_elimination=eps_elimination), mesh, problem)
        states.append(run_scheme(solver, solver.initialize(), 0.3))
    eliminated, saddle = states
    assert eliminated.step == saddle.step == 6
    assert np.linalg.norm(eliminated.u - saddle.u) < 1e-6 * np.linalg.norm(saddle.u)
    assert np.linalg.norm(eliminated.p - saddle.p) < 1e-5 * np.linalg.norm(saddle.p)


KOVASZNAY_RE = 40.0
LAMBDA = KOVASZNAY_RE / 2.0 - math.sqrt(KOVASZNAY_RE**2 / 4.0 + 4.0 * math.pi**2)


def kovasznay_velocity(x):
    e = np.exp(LAMBDA * x[:, 0])
    return np.stack(
        [1.0 - e * np.cos(2.0 * math.pi * x[:, 1]), LAMBDA / (2.0 * math.pi) * e * np.sin(2.0 * math.pi * x[:, 1])],
        axis=1,
    )


def kovasznay_pressure(x):
    return 0.5 * (1.0 - np.exp(2.0 * LAMBDA * x[:, 0]))


def kovasznay_errors(scheme, order, n):
    mesh = hexagon_mesh(n, radius=0.75, center=(0.25, 0.5))
    problem = FlowProblem(velocity=lambda x, t, marker: kovasznay_velocity(x))
    config = make_config(scheme, order, nu=1.0 / KOVASZNAY_RE)
    solver = create_scheme(config, mesh, problem)
    stokes = solver.steady_solve(convection=False)
    if isinstance(solver, CrankNicolsonScheme):
        x0 = np.concatenate([stokes.u, stokes.p, [0.0]])
        state = solver.steady_solve(convection=True, x0=x0)
    else:
        state = solver.steady_solve(convection=True)
    velocity_error = l2_norm(solver.velocity_space, state.u, kovasznay_velocity)

    Q = solver.pressure_space
    integ = cell_integrator(mesh, 2 * order + 4)
    area, _ = integ.integrate(lambda chunk, i: np.ones(chunk.dx.shape))
    exact_mean, _ = integ.integrate(lambda chunk, i: kovasznay_pressure(chunk.geo.x.reshape(-1, 2)).reshape(chunk.dx.shape))
    discrete_mean, _ = integ.integrate(lambda chunk, i: integ.field(Q, state.p, i)[0])
    shift = (exact_mean - discrete_mean) / area
    pressure_error = l2_norm(Q, state.p, lambda x: kovasznay_pressure(x) - shift)
    return velocity_error, pressure_error


@pytest.mark.slow
@pytest.mark.parametrize("scheme, order", [("TH", 2), ("TH", 4), ("gdTH", 2), ("MCS", 2), ("SV", 4)])
def test_kovasznay_spatial_convergence(scheme, order):
    levels = (2, 4, 8)
    errors = np.array([kovasznay_errors(scheme, order, n) for n in levels])
    # slope of log(error) against log(n)
    log_n = np.log(levels)
    velocity_rate = -np.polyfit(log_n, np.log(errors[:, 0]), 1)[0]
    pressure_rate = -np.polyfit(log_n, np.log(errors[:, 1]), 1)[0]
    assert velocity_rate >= order + 0.7, f"{scheme}_{order}: errors {errors[:, 0]}"
    assert pressure_rate > order - 1, f"{scheme}_{order}: errors {errors[:, 1]}"


if __name__ == "__main__":
    pytest.main([__file__])
