"""
Finite element spaces on a Mesh: dof maps, physical tabulation and interpolation.

Every space exposes the same surface: `cell_dofs` (n_cells, n_local) global
indices, optional `cell_signs`, `tabulate(geo, points, cells)` returning a
SpaceTable of physical values, and `interpolate(fn)`.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Tuple

import numpy as np

from utils.element_utils import (
    DEVIATORIC_BASIS,
    bdm_element,
    edge_normal_sign,
    lagrange_element,
    legendre_on_unit,
    stress_element,
)
from utils.mesh_utils import GeometryValues, Mesh
from utils.quadrature_utils import QuadratureFactory

logger = logging.getLogger(__name__)


class SpaceError(ValueError):
    """Invalid space construction or use."""


@dataclass
class SpaceTable:
    """Physical basis data at quadrature points of a set of cells.

    values: (c, q, n, *value_shape); grads: (c, q, n, *value_shape, 2);
    div: (c, q, n) for vector spaces, (c, q, n, 2) for tensor spaces.
    """

    values: np.ndarray
    grads: Optional[np.ndarray] = None
    div: Optional[np.ndarray] = None


class FESpace:
    family = "abstract"
    value_shape: Tuple[int, ...] = ()

    def __init__(self, mesh: Mesh, order: int):
        self.mesh = mesh
        self.order = order
        self.cell_signs: Optional[np.ndarray] = None

    @property
    def n_local(self) -> int:
        return self.cell_dofs.shape[1]

    def __repr__(self) -> str:
        return f"{type(self).__name__}(order={self.order}, n_dofs={self.n_dofs})"

    def tabulate(self, geo: GeometryValues, points: np.ndarray, cells: np.ndarray) -> SpaceTable:
        raise NotImplementedError

    def tabulate_edges(self, edges: np.ndarray, side: int, s: np.ndarray):
        """Tabulate on the `side` cell of each edge at parameters `s`; returns (table, geo, normal, ds)."""
        geo, ref, normal, ds = self.mesh.map_edges(edges, side, s, hessian=self.needs_hessian)
        cells = self.mesh.edge_cells[edges, side]
        n, q = ref.shape[:2]
        table = None
        # Rows sharing the same reference points are tabulated together.
        keys = np.round(ref.reshape(n, -1), 14)
        _, group_ids = np.unique(keys, axis=0, return_inverse=True)
        group_ids = group_ids.reshape(-1)
        for gid in range(group_ids.max() + 1 if n else 0):
            rows = np.flatnonzero(group_ids == gid)
            sub = GeometryValues(
                x=geo.x[rows], J=geo.J[rows], detJ=geo.detJ[rows], Jinv=geo.Jinv[rows],
                H=None if geo.H is None else geo.H[rows],
            )
            part = self.tabulate(sub, ref[rows[0]], cells[rows])
            if table is None:
                table = SpaceTable(
                    values=np.empty((n,) + part.values.shape[1:]),
                    grads=None if part.grads is None else np.empty((n,) + part.grads.shape[1:]),
                    div=None if part.div is None else np.empty((n,) + part.div.shape[1:]),
                )
            table.values[rows] = part.values
            if part.grads is not None:
                table.grads[rows] = part.grads
            if part.div is not None:
                table.div[rows] = part.div
        return table, geo, normal, ds

    needs_hessian = False

    def _apply_signs(self, table: SpaceTable, cells: np.ndarray) -> SpaceTable:
        if self.cell_signs is None:
            return table
        signs = self.cell_signs[cells][:, None, :]
        extra = lambda arr: signs.reshape(signs.shape + (1,) * (arr.ndim - 3))
        table.values = table.values * extra(table.values)
        if table.grads is not None:
            table.grads = table.grads * extra(table.grads)
        if table.div is not None:
            table.div = table.div * extra(table.div)
        return table

    def evaluate(self, coeffs: np.ndarray, points: np.ndarray, cells: Optional[np.ndarray] = None):
        """Field values (c, q, *value_shape) and gradients at reference `points`."""
        cells = np.arange(self.mesh.n_cells) if cells is None else np.asarray(cells)
        geo = self.mesh.map_points(points, cells, hessian=self.needs_hessian)
        table = self.tabulate(geo, points, cells)
        local = coeffs[self.cell_dofs[cells]]
        values = np.einsum("cqn...,cn->cq...", table.values, local)
        grads = None if table.grads is None else np.einsum("cqn...,cn->cq...", table.grads, local)
        return values, grads, geo


def _scalar_grads(ref_grads: np.ndarray, geo: GeometryValues) -> np.ndarray:
    return np.einsum("qnd,cqdb->cqnb", ref_grads, geo.Jinv)


class H1Space(FESpace):
    """Continuous scalar Lagrange P_k (k >= 1)."""

    family = "Lagrange"

    def __init__(self, mesh: Mesh, order: int):
        if order < 1:
            raise SpaceError(f"Continuous Lagrange order must be >= 1, got {order}")
        super().__init__(mesh, order)
        self.element = lagrange_element(order)
        nv, ne, nc = mesh.n_vertices, mesh.n_edges, mesh.n_cells
        n_edge = order - 1
        n_int = len(self.element.interior_dofs)
        self.edge_offset = nv
        self.interior_offset = nv + ne * n_edge
        self.n_dofs = self.interior_offset + nc * n_int
        dofs = np.empty((nc, self.element.dim), dtype=np.int64)
        dofs[:, :3] = mesh.cells
        j = np.arange(n_edge)
        for i in range(3):
            base = self.edge_offset + mesh.cell_edges[:, i][:, None] * n_edge
            same = mesh.cell_edge_same[:, i][:, None]
            dofs[:, self.element.edge_dofs[i]] = base + np.where(same, j[None, :], n_edge - 1 - j[None, :])
        if n_int:
            dofs[:, self.element.interior_dofs] = self.interior_offset + np.arange(nc)[:, None] * n_int + np.arange(n_int)
        self.cell_dofs = dofs
        self.cell_dofs.setflags(write=False)

    def tabulate(self, geo, points, cells) -> SpaceTable:
        vals, grads, _ = self.element.tabulate(points, derivatives=1)
        c = len(cells)
        return SpaceTable(values=np.broadcast_to(vals, (c,) + vals.shape), grads=_scalar_grads(grads, geo))

    def dof_coordinates(self) -> np.ndarray:
        geo = self.mesh.map_points(self.element.nodes)
        coords = np.empty((self.n_dofs, 2))
        coords[self.cell_dofs.ravel()] = geo.x.reshape(-1, 2)
        return coords

    def interpolate(self, fn: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        return np.asarray(fn(self.dof_coordinates()), dtype=float).reshape(self.n_dofs)

    def edge_dofs(self, edges: np.ndarray) -> np.ndarray:
        edges = np.asarray(edges, dtype=np.int64)
        n_edge = self.order - 1
        vertex = self.mesh.edges[edges].ravel()
        inner = (self.edge_offset + edges[:, None] * n_edge + np.arange(n_edge)[None, :]).ravel()
        return np.unique(np.concatenate([vertex, inner]))

    def boundary_dofs(self, markers: Iterable[str]) -> np.ndarray:
        return self.edge_dofs(self.mesh.edges_with_markers(markers))

    def boundary_values(self, markers: Iterable[str], fn: Callable[[np.ndarray], np.ndarray]):
        d = self.boundary_dofs(markers)
        return d, np.asarray(fn(self.dof_coordinates()[d]), dtype=float).reshape(len(d))


class VectorH1Space(FESpace):
    """Two copies of a continuous Lagrange space; component c occupies dofs [c n, (c+1) n)."""

    family = "Lagrange"
    value_shape = (2,)

    def __init__(self, mesh: Mesh, order: int):
        super().__init__(mesh, order)
        self.scalar = H1Space(mesh, order)
        n = self.scalar.n_dofs
        self.n_dofs = 2 * n
        self.cell_dofs = np.hstack([self.scalar.cell_dofs, self.scalar.cell_dofs + n])
        self.cell_dofs.setflags(write=False)

    def tabulate(self, geo, points, cells) -> SpaceTable:
        s = self.scalar.tabulate(geo, points, cells)
        c, q, n = s.grads.shape[:3]
        values = np.zeros((c, q, 2 * n, 2))
        grads = np.zeros((c, q, 2 * n, 2, 2))
        values[:, :, :n, 0] = s.values
        values[:, :, n:, 1] = s.values
        grads[:, :, :n, 0, :] = s.grads
        grads[:, :, n:, 1, :] = s.grads
        div = np.concatenate([s.grads[..., 0], s.grads[..., 1]], axis=2)
        return SpaceTable(values=values, grads=grads, div=div)

    def interpolate(self, fn: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        vals = np.asarray(fn(self.scalar.dof_coordinates()), dtype=float)
        return np.concatenate([vals[:, 0], vals[:, 1]])

    def boundary_dofs(self, markers: Iterable[str]) -> np.ndarray:
        d = self.scalar.boundary_dofs(markers)
        return np.concatenate([d, d + self.scalar.n_dofs])

    def boundary_values(self, markers: Iterable[str], fn: Callable[[np.ndarray], np.ndarray]):
        """Dofs on the marked edges and the nodal values of `fn` there."""
        d = self.scalar.boundary_dofs(markers)
        vals = np.asarray(fn(self.scalar.dof_coordinates()[d]), dtype=float).reshape(-1, 2)
        return np.concatenate([d, d + self.scalar.n_dofs]), np.concatenate([vals[:, 0], vals[:, 1]])


class DGSpace(FESpace):
    """Discontinuous scalar P_k; with `piola=True` basis functions are q_hat / detJ."""

    family = "DG"

    def __init__(self, mesh: Mesh, order: int, piola: bool = False):
        if order < 0:
            raise SpaceError(f"DG order must be >= 0, got {order}")
        super().__init__(mesh, order)
        self.element = lagrange_element(order)
        self.piola = piola
        n = self.element.dim
        self.n_dofs = mesh.n_cells * n
        self.cell_dofs = np.arange(self.n_dofs, dtype=np.int64).reshape(mesh.n_cells, n)
        self.cell_dofs.setflags(write=False)

    def tabulate(self, geo, points, cells) -> SpaceTable:
        vals, grads, _ = self.element.tabulate(points, derivatives=1)
        c = len(cells)
        if self.piola:
            return SpaceTable(values=vals[None, :, :] / geo.detJ[:, :, None])
        return SpaceTable(values=np.broadcast_to(vals, (c,) + vals.shape), grads=_scalar_grads(grads, geo))

    def interpolate(self, fn: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        geo = self.mesh.map_points(self.element.nodes)
        vals = np.asarray(fn(geo.x.reshape(-1, 2)), dtype=float).reshape(geo.detJ.shape)
        if self.piola:
            vals = vals * geo.detJ
        return vals.reshape(-1)


class BDMSpace(FESpace):
    """H(div)-conforming BDM_k with the contravariant Piola map.

    Edge dof j of edge e is the j-th Legendre moment of u.n_e along the edge in
    its global orientation (lo -> hi, n_e = right-hand normal); local moments
    of cells traversing the edge the other way differ by (-1)^(j+1).
    """

    family = "BDM"
    value_shape = (2,)

    def __init__(self, mesh: Mesh, order: int):
        super().__init__(mesh, order)
        self.element = bdm_element(order)
        ne, nc = mesh.n_edges, mesh.n_cells
        n_edge = order + 1
        n_int = len(self.element.interior_dofs)
        self.interior_offset = ne * n_edge
        self.n_dofs = self.interior_offset + nc * n_int
        dofs = np.empty((nc, self.element.dim), dtype=np.int64)
        signs = np.ones((nc, self.element.dim))
        j = np.arange(n_edge)
        for i in range(3):
            dofs[:, self.element.edge_dofs[i]] = mesh.cell_edges[:, i][:, None] * n_edge + j[None, :]
            same = mesh.cell_edge_same[:, i]
            signs[:, self.element.edge_dofs[i]] = np.where(
                same[:, None], edge_normal_sign(order, True)[None, :], edge_normal_sign(order, False)[None, :]
            )
        if n_int:
            dofs[:, self.element.interior_dofs] = self.interior_offset + np.arange(nc)[:, None] * n_int + np.arange(n_int)
        self.cell_dofs = dofs
        self.cell_signs = signs
        self.cell_dofs.setflags(write=False)
        self.cell_signs.setflags(write=False)
        self.needs_hessian = mesh.geometry_order > 1 and len(mesh.curved_edges) > 0

    def tabulate(self, geo, points, cells) -> SpaceTable:
        v, g, div_ref = self.element.tabulate(points)
        det = geo.detJ
        values = np.einsum("cqad,qnd->cqna", geo.J, v) / det[:, :, None, None]
        # d(u_a)/d(xi_e) for u = J v / det
        dref = np.einsum("cqad,qnde->cqnae", geo.J, g) / det[:, :, None, None, None]
        if geo.H is not None:
            ddet = det[..., None] * np.einsum("cqda,cqade->cqe", geo.Jinv, geo.H)
            dJ_over_det = geo.H / det[:, :, None, None, None] - np.einsum(
                "cqad,cqe->cqade", geo.J, ddet
            ) / (det**2)[:, :, None, None, None]
            dref = dref + np.einsum("cqade,qnd->cqnae", dJ_over_det, v)
        grads = np.einsum("cqnae,cqeb->cqnab", dref, geo.Jinv)
        div = div_ref[None, :, :] / det[:, :, None]
        return self._apply_signs(SpaceTable(values=values, grads=grads, div=div), cells)

    def interpolate(self, fn: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        """Moment interpolation; reproduces P_k fields on straight cells."""
        el = self.element
        geo = self.mesh.map_points(el.functional_points)
        u = np.asarray(fn(geo.x.reshape(-1, 2)), dtype=float).reshape(geo.x.shape)
        pulled = geo.detJ[..., None] * np.einsum("cqda,cqa->cqd", geo.Jinv, u)
        local = el.apply_functionals(pulled)
        coeffs = np.zeros(self.n_dofs)
        coeffs[self.cell_dofs] = self.cell_signs * local
        return coeffs

    def edge_dofs(self, edges: np.ndarray) -> np.ndarray:
        n_edge = self.order + 1
        edges = np.asarray(edges, dtype=np.int64)
        return (edges[:, None] * n_edge + np.arange(n_edge)[None, :]).ravel()

    def boundary_dofs(self, markers: Iterable[str]) -> np.ndarray:
        return self.edge_dofs(self.mesh.edges_with_markers(markers))

    def edge_moments(self, edges: np.ndarray, fn: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        """Global edge dof values of a vector function `fn` on `edges`, (n_edges * (k + 1),)."""
        edges = np.asarray(edges, dtype=np.int64)
        k = self.order
        rule = QuadratureFactory.interval(2 * k + 2 * self.mesh.geometry_order)
        geo, _, normal, ds = self.mesh.map_edges(edges, 0, rule.points)
        side0 = self.mesh.edge_cells[edges, 0]
        same = self.mesh.cell_edge_same[side0, self.mesh.edge_local[edges, 0]]
        # global right-hand normal = outward normal of side 0 if the orientations agree
        n_global = np.where(same[:, None, None], normal, -normal)
        g = np.asarray(fn(geo.x.reshape(-1, 2)), dtype=float).reshape(geo.x.shape)
        flux = np.einsum("eqa,eqa->eq", g, n_global) * ds * rule.weights[None, :]
        leg = legendre_on_unit(k, rule.points)
        return (flux @ leg).ravel()

    def boundary_values(self, markers: Iterable[str], fn: Callable[[np.ndarray], np.ndarray]):
        edges = self.mesh.edges_with_markers(markers)
        return self.edge_dofs(edges), self.edge_moments(edges, fn)


class StressSpace(FESpace):
    """Broken trace-free tensor P_k: local dof c n + i is E_c times scalar basis i."""

    family = "Stress"
    value_shape = (2, 2)

    def __init__(self, mesh: Mesh, order: int):
        super().__init__(mesh, order)
        self.element = stress_element(order)
        n = self.element.dim
        self.n_dofs = mesh.n_cells * n
        self.cell_dofs = np.arange(self.n_dofs, dtype=np.int64).reshape(mesh.n_cells, n)
        self.cell_dofs.setflags(write=False)

    def tabulate(self, geo, points, cells) -> SpaceTable:
        values, ref_grads = self.element.tabulate(points)
        c = len(cells)
        sg = _scalar_grads(ref_grads, geo)  # (c, q, ns, 2)
        div = np.einsum("kab,cqsb->cqksa", DEVIATORIC_BASIS, sg)
        div = div.reshape(c, sg.shape[1], self.element.dim, 2)
        return SpaceTable(values=np.broadcast_to(values, (c,) + values.shape), div=div)

    def interpolate(self, fn: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        """Nodal interpolation of the deviatoric part of a tensor field."""
        scalar = self.element.scalar
        geo = self.mesh.map_points(scalar.nodes)
        t = np.asarray(fn(geo.x.reshape(-1, 2)), dtype=float).reshape(geo.x.shape[:2] + (2, 2))
        comps = np.stack([0.5 * (t[..., 0, 0] - t[..., 1, 1]), t[..., 0, 1], t[..., 1, 0]], axis=1)
        return comps.reshape(-1)
