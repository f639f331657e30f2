#!/usr/bin/env python3
"""
Tests for cell assembly, facet traces and Dirichlet elimination.
"""

import math

import numpy as np
import pytest
import scipy.sparse.linalg as spla

from utils.assembly_utils import CellIntegrator, apply_dirichlet
from utils.form_utils import mass_matrix, viscous_matrix
from utils.mesh_utils import Mesh, hexagon_mesh
from utils.space_utils import BDMSpace, H1Space, VectorH1Space

HEXAGON_AREA = 1.5 * math.sqrt(3.0)


def test_p1_mass_matrix_on_reference_triangle():
    mesh = Mesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([[0, 1, 2]]))
    M = mass_matrix(CellIntegrator(mesh, 2), H1Space(mesh, 1)).toarray()
    expected = 0.5 / 12.0 * np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]])
    np.testing.assert_allclose(M, expected, atol=1e-15)


def test_mass_row_sums_give_area():
    mesh = hexagon_mesh(3)
    V = H1Space(mesh, 3)
    M = mass_matrix(CellIntegrator(mesh, 6), V)
    assert M @ np.ones(V.n_dofs) @ np.ones(V.n_dofs) == pytest.approx(HEXAGON_AREA, rel=1e-12)


def test_viscous_energy_of_shear_flow():
    mesh = hexagon_mesh(2, radius=1.3, center=(0.2, -0.4))
    V = VectorH1Space(mesh, 2)
    A = viscous_matrix(CellIntegrator(mesh, 4), V, nu=0.7)
    u = V.interpolate(lambda x: np.stack([x[:, 1], np.zeros(len(x))], axis=1))
    area = 1.5 * math.sqrt(3.0) * 1.3**2
    assert u @ A @ u == pytest.approx(0.7 * area, rel=1e-12)


def test_assembly_independent_of_thread_count(cylinder_mesh):
    V = VectorH1Space(cylinder_mesh, 2)
    serial = mass_matrix(CellIntegrator(cylinder_mesh, 6, threads=1, chunk_size=16), V)
    threaded = mass_matrix(CellIntegrator(cylinder_mesh, 6, threads=4, chunk_size=16), V)
    assert np.array_equal(serial.indptr, threaded.indptr)
    assert np.array_equal(serial.indices, threaded.indices)
    assert np.array_equal(serial.data, threaded.data)


@pytest.mark.parametrize("family", ["VectorLagrange", "BDM"])
def test_dirichlet_elimination_recovers_interpolant(family):
    mesh = hexagon_mesh(2)
    V = VectorH1Space(mesh, 2) if family == "VectorLagrange" else BDMSpace(mesh, 2)
    fn = lambda x: np.stack([1.0 + x[:, 1] ** 2, -2.0 * x[:, 0]], axis=1)
    target = V.interpolate(fn)
    M = mass_matrix(CellIntegrator(mesh, 6), V)

    A, b, condition = apply_dirichlet(V, ["walls"], fn, M, M @ target)
    np.testing.assert_allclose(condition.values, target[condition.dofs], atol=1e-12)
    assert abs(A - A.T).max() < 1e-14
    x = spla.spsolve(A.tocsc(), b)
    np.testing.assert_allclose(x, target, atol=1e-10)


@pytest.mark.parametrize("mesh_name", ["hexagon", "cylinder"])
def test_bdm_normal_component_is_continuous(mesh_name, request):
    mesh = hexagon_mesh(3) if mesh_name == "hexagon" else request.getfixturevalue("cylinder_mesh")
    rng = np.random.default_rng(3)
    V = BDMSpace(mesh, 3)
    coeffs = rng.standard_normal(V.n_dofs)
    edges = np.flatnonzero(mesh.edge_cells[:, 1] >= 0)
    s = rng.uniform(0.0, 1.0, 7)

    table0, _, normal, _ = V.tabulate_edges(edges, 0, s)
    table1, _, _, _ = V.tabulate_edges(edges, 1, s)
    v0 = np.einsum("eqna,en->eqa", table0.values, coeffs[V.cell_dofs[mesh.edge_cells[edges, 0]]])
    v1 = np.einsum("eqna,en->eqa", table1.values, coeffs[V.cell_dofs[mesh.edge_cells[edges, 1]]])
    jump = v0 - v1
    tangent = np.stack([-normal[..., 1], normal[..., 0]], axis=-1)
    size = np.abs(v0).max()
    assert np.abs(np.einsum("eqa,eqa->eq", jump, normal)).max() <= 1e-12 * size
    assert np.abs(np.einsum("eqa,eqa->eq", jump, tangent)).max() > 1e-3 * size


if __name__ == "__main__":
    pytest.main([__file__])
