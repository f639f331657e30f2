#!/usr/bin/env python3
"""
Tests for the force functionals and per-step observables.
"""

import math

import numpy as np
import pytest

from utils.form_utils import FluidParams
from utils.functional_utils import (
    ForceEvaluator,
    ForceSample,
    FunctionalError,
    divergence_norm,
    extension_field,
    kinetic_energy,
    mesh_has_cylinder,
)
from utils.io_utils import TRACE_COLUMNS
from utils.mesh_utils import hexagon_mesh
from utils.scheme_utils import FlowProblem, SchemeConfig, create_scheme, run_scheme
from utils.space_utils import BDMSpace, VectorH1Space

HEXAGON_AREA = 1.5 * math.sqrt(3.0)


def test_force_sample_row_matches_trace_columns():
    sample = ForceSample(
        t=1.0, drag_v=0.5, drag_p=2.5, lift_v=-0.1, lift_p=0.3,
        drag_volume=3.01, lift_volume=0.19, div_norm=1e-9, energy=40.0,
    )
    row = sample.as_row()
    assert len(row) == len(TRACE_COLUMNS)
    assert sample.drag == pytest.approx(3.0)
    assert sample.lift == pytest.approx(0.2)
    assert dict(zip(TRACE_COLUMNS, row))["drag_b"] == pytest.approx(3.0)
    assert dict(zip(TRACE_COLUMNS, row))["drag_p"] == 2.5
    d = sample.as_dict()
    assert d["lift"] == pytest.approx(0.2)
    assert d["energy"] == 40.0


def test_layer_extension_on_cylinder(cylinder_mesh):
    V = VectorH1Space(cylinder_mesh, 2)
    coeffs = extension_field(V, (1.0, 0.0))
    cyl = V.scalar.boundary_dofs(["cylinder"])
    n = V.scalar.n_dofs
    np.testing.assert_allclose(coeffs[cyl], 1.0)
    np.testing.assert_allclose(coeffs[cyl + n], 0.0)
    outer = V.boundary_dofs(["inflow", "outflow", "walls"])
    assert np.all(coeffs[outer] == 0.0)


def test_smooth_extension(cylinder_mesh):
    V = VectorH1Space(cylinder_mesh, 2)
    coeffs = extension_field(V, (0.0, 1.0), kind="smooth", width=1.0)
    n = V.scalar.n_dofs
    cyl = V.scalar.boundary_dofs(["cylinder"])
    np.testing.assert_allclose(coeffs[cyl + n], 1.0, atol=1e-12)
    assert np.all(coeffs[V.boundary_dofs(["inflow", "outflow", "walls"])] == 0.0)

    with pytest.raises(FunctionalError):
        extension_field(V, (1.0, 0.0), kind="smooth", width=20.0)
    with pytest.raises(FunctionalError):
        extension_field(V, (1.0, 0.0), kind="smooth", width=-1.0)
    with pytest.raises(FunctionalError):
        extension_field(V, (1.0, 0.0), kind="spline")


def test_kinetic_energy_of_constant_field():
    V = VectorH1Space(hexagon_mesh(2), 2)
    u = V.interpolate(lambda x: np.tile([1.0, 2.0], (len(x), 1)))
    assert kinetic_energy(V, u) == pytest.approx(0.5 * 5.0 * HEXAGON_AREA, rel=1e-12)


def test_divergence_norm_bdm():
    V = BDMSpace(hexagon_mesh(2), 2)
    constant = V.interpolate(lambda x: np.tile([0.3, -0.7], (len(x), 1)))
    assert divergence_norm(V, constant) < 1e-11
    radial = V.interpolate(lambda x: x.copy())
    assert divergence_norm(V, radial) == pytest.approx(2.0 * math.sqrt(HEXAGON_AREA), rel=1e-10)


def test_mesh_has_cylinder(cylinder_mesh):
    assert mesh_has_cylinder(cylinder_mesh)
    assert not mesh_has_cylinder(hexagon_mesh(1))


@pytest.mark.slow
def test_volume_drag_agrees_with_boundary_drag(cylinder_mesh):
    config = SchemeConfig(scheme="TH", order=2, dt=0.05, fluid=FluidParams.from_reynolds(100.0))
    scheme = create_scheme(config, cylinder_mesh, FlowProblem.cylinder_benchmark())
    evaluator = ForceEvaluator(scheme)
    samples = []
    run_scheme(scheme, scheme.initialize(), 0.5, [lambda s, state: samples.append(evaluator.sample(state))])
    last = samples[-1]
    assert len(samples) == 10
    assert last.drag > 0
    assert last.drag_volume == pytest.approx(last.drag, rel=0.25)
    assert last.div_norm > 0
    assert all(math.isfinite(s.drag_volume) for s in samples)


if __name__ == "__main__":
    pytest.main([__file__])
