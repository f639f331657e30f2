"""
Variational forms of the incompressible Navier-Stokes discretizations.

Two faces of every form live here: assembly routines producing sparse
matrices / residual vectors for the schemes, and direct evaluators working on
DiscreteField arguments. The evaluators return (value, scale) when
`with_scale=True`, where scale is the sum of absolute per-cell (and per-facet)
contributions.
"""

import logging
import weakref
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel, Field, model_validator

from utils.assembly_utils import CellIntegrator, FacetIntegrator
from utils.geometry_utils import MARKER_NAMES
from utils.mesh_utils import Mesh
from utils.space_utils import FESpace

logger = logging.getLogger(__name__)

# Boundary data on facets: (points (n, 2), marker name) -> values (n, 2)
BoundaryValue = Callable[[np.ndarray, str], np.ndarray]
# Body force: points (n, 2) -> values (n, 2)
Forcing = Callable[[np.ndarray], np.ndarray]

IPDG_ALPHA = 10.0


class FluidParams(BaseModel):
    nu: float = Field(gt=0)
    gamma_gd: float = Field(default=1e3, ge=0)
    epsilon_mcs: Optional[float] = Field(default=None, gt=0)

    @model_validator(mode="after")
    def _default_epsilon(self):
        if self.epsilon_mcs is None:
            self.epsilon_mcs = 1e-12 / self.nu
        return self

    @classmethod
    def from_reynolds(cls, reynolds: float, **kwargs) -> "FluidParams":
        return cls(nu=2.0 / reynolds, **kwargs)


@dataclass
class DiscreteField:
    space: FESpace
    coeffs: np.ndarray

    @property
    def mesh(self) -> Mesh:
        return self.space.mesh


def quadrature_degree(order: int) -> int:
    """Cell quadrature degree for velocity order k: exact for the trilinear forms on straight cells."""
    return max(2 * order + 2, 3 * order - 1)


_integrators: "weakref.WeakKeyDictionary[Mesh, Dict]" = weakref.WeakKeyDictionary()


def cell_integrator(mesh: Mesh, degree: int) -> CellIntegrator:
    cache = _integrators.setdefault(mesh, {})
    key = ("cells", degree)
    if key not in cache:
        cache[key] = CellIntegrator(mesh, degree)
    return cache[key]


def facet_integrator(mesh: Mesh, degree: int, kind: str) -> FacetIntegrator:
    """kind: 'interior', 'boundary' or a boundary marker name."""
    cache = _integrators.setdefault(mesh, {})
    key = (kind, degree)
    if key not in cache:
        if kind == "interior":
            edges = mesh.interior_edges
        elif kind == "boundary":
            edges = mesh.boundary_edges
        else:
            edges = mesh.edges_with_markers([kind])
        cache[key] = FacetIntegrator(mesh, degree, edges)
    return cache[key]


def _same_mesh(*fields: DiscreteField) -> Mesh:
    mesh = fields[0].mesh
    for f in fields[1:]:
        if f.mesh is not mesh:
            raise ValueError("Form arguments live on different meshes")
    return mesh


def _degree(*fields: DiscreteField) -> int:
    return sum(f.space.order for f in fields) + 2


def _result(value: float, scale: float, with_scale: bool):
    return (value, scale) if with_scale else value


def boundary_values_on_facets(integ: FacetIntegrator, g: BoundaryValue) -> np.ndarray:
    """Evaluate marker-dependent boundary data at the facet quadrature points, (e, q, 2)."""
    out = np.zeros(integ.x.shape)
    for code in np.unique(integ.markers):
        rows = np.flatnonzero(integ.markers == code)
        pts = integ.x[rows].reshape(-1, 2)
        out[rows] = np.asarray(g(pts, MARKER_NAMES[int(code)]), dtype=float).reshape(len(rows), -1, 2)
    return out


# -- matrices --------------------------------------------------------------


def mass_matrix(integ: CellIntegrator, space: FESpace) -> sp.csr_matrix:
    def kernel(te, tr, chunk, i):
        if te.values.ndim == 3:
            return np.einsum("cqi,cqj,cq->cij", te.values, tr.values, chunk.dx)
        return np.einsum("cqia,cqja,cq->cij", te.values, tr.values, chunk.dx)

    return integ.assemble_matrix(space, space, kernel)


def viscous_matrix(integ: CellIntegrator, space: FESpace, nu: float) -> sp.csr_matrix:
    """Volume part of a(u, v) = int nu/2 D(u):D(v)."""

    def kernel(te, tr, chunk, i):
        full = np.einsum("cqiab,cqjab,cq->cij", te.grads, tr.grads, chunk.dx)
        transposed = np.einsum("cqiab,cqjba,cq->cij", te.grads, tr.grads, chunk.dx)
        return nu * (full + transposed)

    return integ.assemble_matrix(space, space, kernel)


def divergence_matrix(integ: CellIntegrator, velocity: FESpace, pressure: FESpace) -> sp.csr_matrix:
    """B with B[q, u] = b(u, q) = -int q div u."""
    return integ.assemble_matrix(
        pressure, velocity, lambda te, tr, chunk, i: -np.einsum("cqi,cqj,cq->cij", te.values, tr.div, chunk.dx)
    )


def graddiv_matrix(integ: CellIntegrator, space: FESpace, gamma: float) -> sp.csr_matrix:
    return integ.assemble_matrix(
        space, space, lambda te, tr, chunk, i: gamma * np.einsum("cqi,cqj,cq->cij", te.div, tr.div, chunk.dx)
    )


def pressure_mean_vector(integ: CellIntegrator, pressure: FESpace) -> np.ndarray:
    return integ.assemble_vector(pressure, lambda te, chunk, i: np.einsum("cqi,cq->ci", te.values, chunk.dx))


def forcing_vector(integ: CellIntegrator, space: FESpace, forcing: Optional[Forcing]) -> np.ndarray:
    if forcing is None:
        return np.zeros(space.n_dofs)

    def kernel(te, chunk, i):
        f = np.asarray(forcing(chunk.geo.x.reshape(-1, 2)), dtype=float).reshape(chunk.geo.x.shape)
        return np.einsum("cqia,cqa,cq->ci", te.values, f, chunk.dx)

    return integ.assemble_vector(space, kernel)


def convection_matrices(integ: CellIntegrator, space: FESpace, u: np.ndarray) -> Tuple[sp.csr_matrix, sp.csr_matrix]:
    """Picard and Newton parts of the linearization of c_div(u, u, w) at u."""

    def picard(te, tr, chunk, i):
        uv, _, udiv = integ.field(space, u, i)
        adv = np.einsum("cqb,cqjab->cqja", uv, tr.grads)
        return np.einsum("cqja,cqia,cq->cij", adv, te.values, chunk.dx) + 0.5 * np.einsum(
            "cq,cqja,cqia,cq->cij", udiv, tr.values, te.values, chunk.dx
        )

    def newton(te, tr, chunk, i):
        uv, ug, _ = integ.field(space, u, i)
        adv = np.einsum("cqjb,cqab->cqja", tr.values, ug)
        return np.einsum("cqja,cqia,cq->cij", adv, te.values, chunk.dx) + 0.5 * np.einsum(
            "cqj,cqa,cqia,cq->cij", tr.div, uv, te.values, chunk.dx
        )

    return integ.assemble_matrix(space, space, picard), integ.assemble_matrix(space, space, newton)


def c_div_vector(integ: CellIntegrator, space: FESpace, u: np.ndarray) -> np.ndarray:
    """r_i = c_div(u, u, phi_i)."""

    def kernel(te, chunk, i):
        uv, ug, udiv = integ.field(space, u, i)
        conv = np.einsum("cqb,cqab->cqa", uv, ug) + 0.5 * udiv[..., None] * uv
        return np.einsum("cqa,cqia,cq->ci", conv, te.values, chunk.dx)

    return integ.assemble_vector(space, kernel)


def _traction(grads: np.ndarray, normal: np.ndarray, nu: float) -> np.ndarray:
    """nu D(phi) n for tabulated gradients (e, q, n, 2, 2)."""
    return nu * (np.einsum("eqnab,eqb->eqna", grads, normal) + np.einsum("eqnba,eqb->eqna", grads, normal))


def _penalty(integ: FacetIntegrator, order: int, nu: float, alpha: float) -> np.ndarray:
    return alpha * nu * (order + 1) * (order + 2) / 2.0 / integ.h


def _jump_average(integ: FacetIntegrator, space: FESpace, nu: float):
    """Concatenated [side 0, side 1] jumps and traction averages of the basis."""
    t0 = integ.table(space, 0)
    if not integ.interior:
        return t0.values, _traction(t0.grads, integ.normal, nu)
    t1 = integ.table(space, 1)
    jump = np.concatenate([t0.values, -t1.values], axis=2)
    avg = 0.5 * np.concatenate(
        [_traction(t0.grads, integ.normal, nu), _traction(t1.grads, integ.normal, nu)], axis=2
    )
    return jump, avg


def interior_penalty_matrix(integ: FacetIntegrator, space: FESpace, nu: float, alpha: float = IPDG_ALPHA) -> sp.csr_matrix:
    """Symmetric interior penalty facet terms of the viscous form (Nitsche on boundary edges)."""
    if len(integ.edges) == 0:
        return sp.csr_matrix((space.n_dofs, space.n_dofs))
    jump, avg = _jump_average(integ, space, nu)
    pen = _penalty(integ, space.order, nu, alpha)[:, None] * integ.ds
    local = (
        -np.einsum("eqja,eqia,eq->eij", avg, jump, integ.ds)
        - np.einsum("eqia,eqja,eq->eij", avg, jump, integ.ds)
        + np.einsum("eqia,eqja,eq->eij", jump, jump, pen)
    )
    return integ.assemble_matrix(space, space, local)


def nitsche_vector(
    integ: FacetIntegrator, space: FESpace, nu: float, g: BoundaryValue, alpha: float = IPDG_ALPHA
) -> np.ndarray:
    """Right-hand side of the Nitsche terms for boundary velocity g."""
    if len(integ.edges) == 0:
        return np.zeros(space.n_dofs)
    values, traction = _jump_average(integ, space, nu)
    gv = boundary_values_on_facets(integ, g)
    pen = _penalty(integ, space.order, nu, alpha)[:, None] * integ.ds
    local = -np.einsum("eqia,eqa,eq->ei", traction, gv, integ.ds) + np.einsum("eqia,eqa,eq->ei", values, gv, pen)
    return integ.assemble_vector(space, local)


def _facet_velocity(integ: FacetIntegrator, space: FESpace, u: np.ndarray):
    u0, _ = integ.field(space, u, 0)
    if integ.interior:
        u1, _ = integ.field(space, u, 1)
        un = 0.5 * np.einsum("eqa,eqa->eq", u0 + u1, integ.normal)
        return u0, u1, un
    return u0, None, np.einsum("eqa,eqa->eq", u0, integ.normal)


def c_upw_vector(
    cells: CellIntegrator,
    interior: FacetIntegrator,
    boundary: FacetIntegrator,
    space: FESpace,
    u: np.ndarray,
    g: Optional[BoundaryValue],
) -> np.ndarray:
    """r_i = c_upw(u, u, phi_i); on inflow facets the upwind value is the datum g."""

    def kernel(te, chunk, i):
        uv, _, _ = cells.field(space, u, i)
        return -np.einsum("cqb,cqiab,cqa,cq->ci", uv, te.grads, uv, chunk.dx)

    r = cells.assemble_vector(space, kernel)
    if len(interior.edges):
        u0, u1, un = _facet_velocity(interior, space, u)
        up = np.where((un >= 0)[..., None], u0, u1)
        w0 = interior.table(space, 0).values
        w1 = interior.table(space, 1).values
        flux = (un * interior.ds)[..., None] * up
        local = np.concatenate(
            [np.einsum("eqa,eqia->ei", flux, w0), -np.einsum("eqa,eqia->ei", flux, w1)], axis=1
        )
        r += interior.assemble_vector(space, local)
    if len(boundary.edges):
        u0, _, un = _facet_velocity(boundary, space, u)
        outer = boundary_values_on_facets(boundary, g) if g is not None else u0
        up = np.where((un >= 0)[..., None], u0, outer)
        flux = (un * boundary.ds)[..., None] * up
        r += boundary.assemble_vector(space, np.einsum("eqa,eqia->ei", flux, boundary.table(space, 0).values))
    return r


def c_cf_vector(
    cells: CellIntegrator,
    interior: FacetIntegrator,
    boundary: FacetIntegrator,
    space: FESpace,
    u: np.ndarray,
    g: Optional[BoundaryValue],
) -> np.ndarray:
    """r_i = c_cf(u, u, phi_i) with the centered flux; g is the outer trace on the boundary."""

    def kernel(te, chunk, i):
        uv, ug, _ = cells.field(space, u, i)
        return np.einsum("cqb,cqab,cqia,cq->ci", uv, ug, te.values, chunk.dx)

    r = cells.assemble_vector(space, kernel)
    if len(interior.edges):
        u0, u1, un = _facet_velocity(interior, space, u)
        flux = -0.5 * (un * interior.ds)[..., None] * (u0 - u1)
        w0 = interior.table(space, 0).values
        w1 = interior.table(space, 1).values
        local = np.concatenate([np.einsum("eqa,eqia->ei", flux, w0), np.einsum("eqa,eqia->ei", flux, w1)], axis=1)
        r += interior.assemble_vector(space, local)
    if len(boundary.edges) and g is not None:
        u0, _, un = _facet_velocity(boundary, space, u)
        gv = boundary_values_on_facets(boundary, g)
        flux = -0.5 * (un * boundary.ds)[..., None] * (u0 - gv)
        r += boundary.assemble_vector(space, np.einsum("eqa,eqia->ei", flux, boundary.table(space, 0).values))
    return r


def upwind_matrix(
    cells: CellIntegrator,
    interior: FacetIntegrator,
    boundary: FacetIntegrator,
    space: FESpace,
    beta: np.ndarray,
    g: Optional[BoundaryValue],
) -> Tuple[sp.csr_matrix, np.ndarray]:
    """Matrix of v -> c_upw(beta, v, w) and the inflow data moved to the right-hand side."""

    def kernel(te, tr, chunk, i):
        bv, _, _ = cells.field(space, beta, i)
        return -np.einsum("cqb,cqiab,cqja,cq->cij", bv, te.grads, tr.values, chunk.dx)

    C = cells.assemble_matrix(space, space, kernel)
    rhs = np.zeros(space.n_dofs)
    if len(interior.edges):
        _, _, bn = _facet_velocity(interior, space, beta)
        w0 = interior.table(space, 0).values
        w1 = interior.table(space, 1).values
        test = np.concatenate([w0, -w1], axis=2)
        trial = np.concatenate(
            [np.where((bn >= 0)[..., None, None], w0, 0.0), np.where((bn < 0)[..., None, None], w1, 0.0)], axis=2
        )
        local = np.einsum("eq,eqja,eqia->eij", bn * interior.ds, trial, test)
        C = C + interior.assemble_matrix(space, space, local)
    if len(boundary.edges):
        _, _, bn = _facet_velocity(boundary, space, beta)
        w = boundary.table(space, 0).values
        outflow = np.where(bn >= 0, bn, 0.0) * boundary.ds
        C = C + boundary.assemble_matrix(space, space, np.einsum("eq,eqja,eqia->eij", outflow, w, w))
        if g is not None:
            inflow = np.where(bn < 0, bn, 0.0) * boundary.ds
            gv = boundary_values_on_facets(boundary, g)
            rhs -= boundary.assemble_vector(space, np.einsum("eq,eqa,eqia->ei", inflow, gv, w))
    return C.tocsr(), rhs


# -- direct evaluators -----------------------------------------------------


def _cells(mesh: Mesh, degree: int) -> CellIntegrator:
    return cell_integrator(mesh, degree)


def form_a(v: DiscreteField, w: DiscreteField, nu: float, with_scale: bool = False):
    """int nu/2 D(v):D(w) (volume terms only)."""
    mesh = _same_mesh(v, w)
    integ = _cells(mesh, _degree(v, w))

    def fn(chunk, i):
        _, gv, _ = integ.field(v.space, v.coeffs, i)
        _, gw, _ = integ.field(w.space, w.coeffs, i)
        Dv = gv + np.swapaxes(gv, -1, -2)
        Dw = gw + np.swapaxes(gw, -1, -2)
        return 0.5 * nu * np.einsum("cqab,cqab->cq", Dv, Dw)

    return _result(*integ.integrate(fn), with_scale)


def form_b(v: DiscreteField, q: DiscreteField, with_scale: bool = False):
    """-int q div v."""
    mesh = _same_mesh(v, q)
    integ = _cells(mesh, _degree(v, q))

    def fn(chunk, i):
        _, _, dv = integ.field(v.space, v.coeffs, i)
        qv, _, _ = integ.field(q.space, q.coeffs, i)
        return -qv * dv

    return _result(*integ.integrate(fn), with_scale)


def form_c_conv(u: DiscreteField, v: DiscreteField, w: DiscreteField, with_scale: bool = False):
    """int (u . grad v) . w"""
    mesh = _same_mesh(u, v, w)
    integ = _cells(mesh, _degree(u, v, w))

    def fn(chunk, i):
        uv, _, _ = integ.field(u.space, u.coeffs, i)
        _, gv, _ = integ.field(v.space, v.coeffs, i)
        wv, _, _ = integ.field(w.space, w.coeffs, i)
        return np.einsum("cqb,cqab,cqa->cq", uv, gv, wv)

    return _result(*integ.integrate(fn), with_scale)


def form_c_div(u: DiscreteField, v: DiscreteField, w: DiscreteField, with_scale: bool = False):
    """c_conv(u, v, w) + 1/2 int div(u) v . w"""
    mesh = _same_mesh(u, v, w)
    integ = _cells(mesh, _degree(u, v, w))

    def fn(chunk, i):
        uv, _, ud = integ.field(u.space, u.coeffs, i)
        vv, gv, _ = integ.field(v.space, v.coeffs, i)
        wv, _, _ = integ.field(w.space, w.coeffs, i)
        return np.einsum("cqb,cqab,cqa->cq", uv, gv, wv) + 0.5 * ud * np.einsum("cqa,cqa->cq", vv, wv)

    return _result(*integ.integrate(fn), with_scale)


def _facet_sum(local: np.ndarray) -> Tuple[float, float]:
    per_edge = local.sum(axis=1) if local.ndim > 1 else local
    return float(per_edge.sum()), float(np.abs(per_edge).sum())


def form_c_upw(
    u: DiscreteField, v: DiscreteField, w: DiscreteField, boundary_value: Optional[BoundaryValue] = None,
    with_scale: bool = False,
):
    """sum_T -int_T (u . grad w) . v + oint_dT (u . n) v_up . w with v_up the upwind trace of v."""
    mesh = _same_mesh(u, v, w)
    deg = _degree(u, v, w)
    integ = _cells(mesh, deg)

    def fn(chunk, i):
        uv, _, _ = integ.field(u.space, u.coeffs, i)
        vv, _, _ = integ.field(v.space, v.coeffs, i)
        _, gw, _ = integ.field(w.space, w.coeffs, i)
        return -np.einsum("cqb,cqab,cqa->cq", uv, gw, vv)

    total, scale = integ.integrate(fn)
    inner = facet_integrator(mesh, deg, "interior")
    if len(inner.edges):
        u0, _ = inner.field(u.space, u.coeffs, 0)
        u1, _ = inner.field(u.space, u.coeffs, 1)
        v0, _ = inner.field(v.space, v.coeffs, 0)
        v1, _ = inner.field(v.space, v.coeffs, 1)
        w0, _ = inner.field(w.space, w.coeffs, 0)
        w1, _ = inner.field(w.space, w.coeffs, 1)
        un = 0.5 * np.einsum("eqa,eqa->eq", u0 + u1, inner.normal)
        vup = np.where((un >= 0)[..., None], v0, v1)
        t, s = _facet_sum(un * np.einsum("eqa,eqa->eq", vup, w0 - w1) * inner.ds)
        total, scale = total + t, scale + s
    outer = facet_integrator(mesh, deg, "boundary")
    if len(outer.edges):
        u0, _ = outer.field(u.space, u.coeffs, 0)
        v0, _ = outer.field(v.space, v.coeffs, 0)
        w0, _ = outer.field(w.space, w.coeffs, 0)
        un = np.einsum("eqa,eqa->eq", u0, outer.normal)
        other = boundary_values_on_facets(outer, boundary_value) if boundary_value is not None else v0
        vup = np.where((un >= 0)[..., None], v0, other)
        t, s = _facet_sum(un * np.einsum("eqa,eqa->eq", vup, w0) * outer.ds)
        total, scale = total + t, scale + s
    return _result(total, scale, with_scale)


def form_c_cf(
    u: DiscreteField, v: DiscreteField, w: DiscreteField, boundary_value: Optional[BoundaryValue] = None,
    with_scale: bool = False,
):
    """sum_T int_T (u . grad v) . w - oint_dT (u . n) 1/2 (v - v_other) . w"""
    mesh = _same_mesh(u, v, w)
    deg = _degree(u, v, w)
    integ = _cells(mesh, deg)

    def fn(chunk, i):
        uv, _, _ = integ.field(u.space, u.coeffs, i)
        _, gv, _ = integ.field(v.space, v.coeffs, i)
        wv, _, _ = integ.field(w.space, w.coeffs, i)
        return np.einsum("cqb,cqab,cqa->cq", uv, gv, wv)

    total, scale = integ.integrate(fn)
    inner = facet_integrator(mesh, deg, "interior")
    if len(inner.edges):
        u0, _ = inner.field(u.space, u.coeffs, 0)
        u1, _ = inner.field(u.space, u.coeffs, 1)
        v0, _ = inner.field(v.space, v.coeffs, 0)
        v1, _ = inner.field(v.space, v.coeffs, 1)
        w0, _ = inner.field(w.space, w.coeffs, 0)
        w1, _ = inner.field(w.space, w.coeffs, 1)
        un = 0.5 * np.einsum("eqa,eqa->eq", u0 + u1, inner.normal)
        t, s = _facet_sum(-un * np.einsum("eqa,eqa->eq", v0 - v1, 0.5 * (w0 + w1)) * inner.ds)
        total, scale = total + t, scale + s
    outer = facet_integrator(mesh, deg, "boundary")
    if len(outer.edges) and boundary_value is not None:
        u0, _ = outer.field(u.space, u.coeffs, 0)
        v0, _ = outer.field(v.space, v.coeffs, 0)
        w0, _ = outer.field(w.space, w.coeffs, 0)
        un = np.einsum("eqa,eqa->eq", u0, outer.normal)
        gv = boundary_values_on_facets(outer, boundary_value)
        t, s = _facet_sum(-0.5 * un * np.einsum("eqa,eqa->eq", v0 - gv, w0) * outer.ds)
        total, scale = total + t, scale + s
    return _result(total, scale, with_scale)


def form_j_gd(v: DiscreteField, w: DiscreteField, gamma_gd: float, with_scale: bool = False):
    """gamma int div(v) div(w)"""
    mesh = _same_mesh(v, w)
    integ = _cells(mesh, _degree(v, w))

    def fn(chunk, i):
        _, _, dv = integ.field(v.space, v.coeffs, i)
        _, _, dw = integ.field(w.space, w.coeffs, i)
        return gamma_gd * dv * dw

    return _result(*integ.integrate(fn), with_scale)


def form_a_prime(sigma: DiscreteField, tau: DiscreteField, nu: float, with_scale: bool = False):
    """1/nu int sigma : tau"""
    mesh = _same_mesh(sigma, tau)
    integ = _cells(mesh, _degree(sigma, tau))

    def fn(chunk, i):
        s, _, _ = integ.field(sigma.space, sigma.coeffs, i)
        t, _, _ = integ.field(tau.space, tau.coeffs, i)
        return np.einsum("cqab,cqab->cq", s, t) / nu

    return _result(*integ.integrate(fn), with_scale)


def form_b_prime(tau: DiscreteField, u: DiscreteField, flip_normals: bool = False, with_scale: bool = False):
    """sum_T int_T div(tau) . u + sum_F int_F [[tau_nn]] u . n.

    The jump is taken from the side the facet normal points out of; flipping
    every normal swaps the sides, which leaves the value unchanged.
    """
    mesh = _same_mesh(tau, u)
    deg = _degree(tau, u)
    integ = _cells(mesh, deg)

    def fn(chunk, i):
        _, _, dtau = integ.field(tau.space, tau.coeffs, i)
        uv, _, _ = integ.field(u.space, u.coeffs, i)
        return np.einsum("cqa,cqa->cq", dtau, uv)

    total, scale = integ.integrate(fn)
    sign = -1.0 if flip_normals else 1.0
    for kind in ("interior", "boundary"):
        facets = facet_integrator(mesh, deg, kind)
        if len(facets.edges) == 0:
            continue
        n = sign * facets.normal
        t0, _ = facets.field(tau.space, tau.coeffs, 0)
        u0, _ = facets.field(u.space, u.coeffs, 0)
        nn0 = np.einsum("eqa,eqab,eqb->eq", n, t0, n)
        if facets.interior:
            t1, _ = facets.field(tau.space, tau.coeffs, 1)
            nn1 = np.einsum("eqa,eqab,eqb->eq", n, t1, n)
        else:
            nn1 = np.zeros_like(nn0)
        jump = nn0 - nn1 if not flip_normals else nn1 - nn0
        t, s = _facet_sum(jump * np.einsum("eqa,eqa->eq", u0, n) * facets.ds)
        total, scale = total + t, scale + s
    return _result(total, scale, with_scale)


def forcing_functional(f: Forcing, w: DiscreteField, with_scale: bool = False):
    """int f . w"""
    integ = _cells(w.mesh, 2 * w.space.order + 2)

    def fn(chunk, i):
        wv, _, _ = integ.field(w.space, w.coeffs, i)
        fv = np.asarray(f(chunk.geo.x.reshape(-1, 2)), dtype=float).reshape(chunk.geo.x.shape)
        return np.einsum("cqa,cqa->cq", fv, wv)

    return _result(*integ.integrate(fn), with_scale)
