"""
Triangular meshes of the benchmark domain.

The generator places fixed points along the boundary (straight sides sampled by
the size field, the circle at equal angles), fills the interior with a
multilevel lattice, smooths the free points with a truss force model and
repairs singular vertices by edge flips. Cylinder edges carry geometry nodes on
the circle so that cells touching the hole are mapped by a P_g polynomial.
"""

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial import Delaunay

from utils.element_utils import EDGE_VERTICES, REF_VERTICES, lagrange_element
from utils.geometry_utils import (
    MARKER_NAMES,
    MARKERS,
    Geometry,
    MeshParams,
    SizeField,
    boundary_points,
)
from utils.quadrature_utils import QuadratureFactory

logger = logging.getLogger(__name__)

MESH_FORMAT_VERSION = 1


class MeshError(ValueError):
    """Mesh invariant violated."""


class MeshGenerationError(RuntimeError):
    """The generator could not produce an acceptable mesh."""


class MeshFormatError(ValueError):
    """Malformed mesh file."""


@dataclass
class GeometryValues:
    """Geometry map evaluated at reference points for a set of cells."""

    x: np.ndarray  # (c, q, 2)
    J: np.ndarray  # (c, q, 2, 2), J[a, d] = dx_a / dxi_d
    detJ: np.ndarray  # (c, q)
    Jinv: np.ndarray  # (c, q, 2, 2), Jinv[d, b] = dxi_d / dx_b
    H: Optional[np.ndarray] = None  # (c, q, 2, 2, 2), second derivatives d2x_a / dxi_d dxi_e

    @property
    def affine(self) -> bool:
        return self.H is None or not np.any(self.H)


def _lagrange_1d(nodes: np.ndarray, s: np.ndarray) -> np.ndarray:
    """1D Lagrange basis through `nodes`, evaluated at `s`; shape (len(s), len(nodes))."""
    s = np.asarray(s, dtype=float)
    out = np.ones((len(s), len(nodes)))
    for m, sm in enumerate(nodes):
        for l, sl in enumerate(nodes):
            if l != m:
                out[:, m] *= (s - sl) / (sm - sl)
    return out


def build_topology(cells: np.ndarray, n_vertices: int):
    """Unique edges (lo, hi) with their adjacent cells and local edge indices."""
    n_cells = len(cells)
    local = cells[:, [EDGE_VERTICES[i][j] for i in range(3) for j in range(2)]].reshape(n_cells, 3, 2)
    lo = np.minimum(local[..., 0], local[..., 1]).astype(np.int64)
    hi = np.maximum(local[..., 0], local[..., 1]).astype(np.int64)
    keys = lo * n_vertices + hi
    unique, inverse = np.unique(keys.ravel(), return_inverse=True)
    inverse = inverse.reshape(-1)
    edges = np.stack([unique // n_vertices, unique % n_vertices], axis=1)
    counts = np.bincount(inverse, minlength=len(unique))
    if np.any(counts > 2):
        bad = edges[np.argmax(counts > 2)]
        raise MeshError(f"Edge {tuple(bad)} is shared by more than two cells")
    order = np.argsort(inverse, kind="stable")
    sorted_edges = inverse[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = sorted_edges[1:] != sorted_edges[:-1]
    edge_cells = np.full((len(unique), 2), -1, dtype=np.int64)
    edge_local = np.full((len(unique), 2), -1, dtype=np.int64)
    edge_cells[sorted_edges[first], 0] = order[first] // 3
    edge_local[sorted_edges[first], 0] = order[first] % 3
    edge_cells[sorted_edges[~first], 1] = order[~first] // 3
    edge_local[sorted_edges[~first], 1] = order[~first] % 3
    cell_edges = inverse.reshape(n_cells, 3)
    cell_edge_same = local[..., 0] == edges[cell_edges, 0]
    return edges, edge_cells, edge_local, cell_edges, cell_edge_same


class Mesh:
    """Immutable triangulation with boundary markers and curved cylinder edges.

    Edges are stored as (lo, hi) vertex pairs; the global edge orientation runs
    from lo to hi. `edge_cells[:, 0]` is the cell from which the edge normal
    points outward; boundary edges have `edge_cells[:, 1] == -1`.
    """

    def __init__(
        self,
        vertices: np.ndarray,
        cells: np.ndarray,
        boundary_markers: Optional[Dict[Tuple[int, int], str]] = None,
        curved_nodes: Optional[Dict[Tuple[int, int], np.ndarray]] = None,
        geometry_order: int = 1,
    ):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.cells = np.ascontiguousarray(cells, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise MeshError(f"vertices must have shape (n, 2), got {self.vertices.shape}")
        if self.cells.ndim != 2 or self.cells.shape[1] != 3:
            raise MeshError(f"cells must have shape (n, 3), got {self.cells.shape}")
        if self.cells.min() < 0 or self.cells.max() >= len(self.vertices):
            raise MeshError("cell vertex index out of range")
        if geometry_order < 1:
            raise MeshError(f"geometry_order must be >= 1, got {geometry_order}")
        self.geometry_order = int(geometry_order)

        areas = self._signed_areas()
        if np.any(areas <= 0):
            bad = int(np.argmax(areas <= 0))
            raise MeshError(f"Cell {bad} {tuple(self.cells[bad])} is not positively oriented (area {areas[bad]:.3e})")

        (
            self.edges,
            self.edge_cells,
            self.edge_local,
            self.cell_edges,
            self.cell_edge_same,
        ) = build_topology(self.cells, len(self.vertices))

        boundary = self.edge_cells[:, 1] < 0
        key_to_edge = {(int(a), int(b)): i for i, (a, b) in enumerate(self.edges)}
        self.edge_markers = np.zeros(len(self.edges), dtype=np.int64)
        if boundary_markers is None:
            self.edge_markers[boundary] = MARKERS["walls"]
        else:
            for (a, b), name in boundary_markers.items():
                key = (min(a, b), max(a, b))
                if key not in key_to_edge:
                    raise MeshError(f"Marked edge {key} is not an edge of the mesh")
                if name not in MARKERS:
                    raise MeshError(f"Unknown boundary marker '{name}'")
                e = key_to_edge[key]
                if not boundary[e]:
                    raise MeshError(f"Marked edge {key} is an interior edge")
                self.edge_markers[e] = MARKERS[name]
            missing = np.flatnonzero(boundary & (self.edge_markers == 0))
            if len(missing):
                raise MeshError(f"Boundary edge {tuple(self.edges[missing[0]])} has no marker")

        n_inner = self.geometry_order - 1
        curved_edges, nodes = [], []
        for (a, b), pts in sorted((curved_nodes or {}).items()):
            key = (min(a, b), max(a, b))
            if key not in key_to_edge:
                raise MeshError(f"Curved edge {key} is not an edge of the mesh")
            pts = np.asarray(pts, dtype=float).reshape(-1, 2)
            if len(pts) != n_inner:
                raise MeshError(f"Curved edge {key} has {len(pts)} nodes, expected {n_inner}")
            if a > b:
                pts = pts[::-1]
            curved_edges.append(key_to_edge[key])
            nodes.append(pts)
        order = np.argsort(curved_edges, kind="stable")
        self.curved_edges = np.asarray(curved_edges, dtype=np.int64)[order]
        self.curved_nodes = (
            np.asarray(nodes, dtype=float)[order] if nodes else np.zeros((0, n_inner, 2))
        )

        for arr in (self.vertices, self.cells, self.edges, self.edge_cells, self.edge_local,
                    self.cell_edges, self.cell_edge_same, self.edge_markers, self.curved_edges,
                    self.curved_nodes):
            arr.setflags(write=False)

        self._check_positive_jacobians()

    # -- basic quantities -------------------------------------------------

    def _signed_areas(self) -> np.ndarray:
        p = self.vertices[self.cells]
        return 0.5 * (
            (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
            - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1])
        )

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def cell_areas(self) -> np.ndarray:
        """Areas of the straight-sided cells."""
        return self._signed_areas()

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    @cached_property
    def cell_diameters(self) -> np.ndarray:
        return self.edge_lengths[self.cell_edges].max(axis=1)

    @property
    def boundary_edges(self) -> np.ndarray:
        return np.flatnonzero(self.edge_cells[:, 1] < 0)

    @property
    def interior_edges(self) -> np.ndarray:
        return np.flatnonzero(self.edge_cells[:, 1] >= 0)

    @cached_property
    def boundary_vertices(self) -> np.ndarray:
        return np.unique(self.edges[self.boundary_edges].ravel())

    def marker_codes(self, markers: Iterable[str]) -> List[int]:
        codes = []
        for name in markers:
            if name not in MARKERS:
                raise MeshError(f"Unknown boundary marker '{name}'")
            codes.append(MARKERS[name])
        return codes

    def edges_with_markers(self, markers: Iterable[str]) -> np.ndarray:
        """Boundary edges carrying any of `markers`; raises if a marker is absent."""
        markers = list(markers)
        selected = []
        for name, code in zip(markers, self.marker_codes(markers)):
            found = np.flatnonzero(self.edge_markers == code)
            if len(found) == 0:
                raise MeshError(f"Marker '{name}' is not present in the mesh")
            selected.append(found)
        return np.unique(np.concatenate(selected)) if selected else np.zeros(0, dtype=np.int64)

    @cached_property
    def facet_sizes(self) -> np.ndarray:
        """Local length scale per edge: min adjacent cell area over edge length."""
        a0 = self.cell_areas[self.edge_cells[:, 0]]
        a1 = np.where(self.edge_cells[:, 1] >= 0, self.cell_areas[np.maximum(self.edge_cells[:, 1], 0)], np.inf)
        return np.minimum(a0, a1) / self.edge_lengths

    @cached_property
    def curved_cell_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_cells, dtype=bool)
        if len(self.curved_edges):
            mask[self.edge_cells[self.curved_edges, 0]] = True
        return mask

    def cylinder_circle(self) -> Tuple[np.ndarray, float]:
        """Center and radius of the circle through the cylinder vertices."""
        edges = self.edges_with_markers(["cylinder"])
        pts = self.vertices[np.unique(self.edges[edges].ravel())]
        center = pts.mean(axis=0)
        radius = float(np.mean(np.hypot(pts[:, 0] - center[0], pts[:, 1] - center[1])))
        return center, radius

    # -- geometry map -----------------------------------------------------

    @cached_property
    def geometry_nodes(self) -> np.ndarray:
        """Physical positions of the P_g geometry nodes of every cell, (n_cells, n_g, 2)."""
        g = self.geometry_order
        element = lagrange_element(g)
        lam = element.barycentric_nodes
        nodes = np.einsum("nk,ckd->cnd", lam, self.vertices[self.cells])
        if len(self.curved_edges) == 0:
            return nodes
        s_nodes = np.linspace(0.0, 1.0, g + 1)
        for j, e in enumerate(self.curved_edges):
            c = self.edge_cells[e, 0]
            i = self.edge_local[e, 0]
            a_loc, b_loc = EDGE_VERTICES[i]
            xa = self.vertices[self.cells[c, a_loc]]
            xb = self.vertices[self.cells[c, b_loc]]
            inner = self.curved_nodes[j] if self.cell_edge_same[c, i] else self.curved_nodes[j][::-1]
            offsets = np.zeros((g + 1, 2))
            offsets[1:g] = inner - (xa[None, :] + s_nodes[1:g, None] * (xb - xa)[None, :])
            weight = lam[:, a_loc] + lam[:, b_loc]
            active = weight > 1e-14
            s = np.where(active, lam[:, b_loc] / np.where(active, weight, 1.0), 0.0)
            shift = weight[:, None] * (_lagrange_1d(s_nodes, s) @ offsets)
            nodes[c] += np.where(active[:, None], shift, 0.0)
        return nodes

    def map_points(self, points: np.ndarray, cells: Optional[np.ndarray] = None, hessian: bool = False) -> GeometryValues:
        """Evaluate the geometry map at reference `points` (q, 2) for `cells`."""
        element = lagrange_element(self.geometry_order)
        vals, grads, hess = element.tabulate(points, derivatives=2 if hessian else 1)
        X = self.geometry_nodes if cells is None else self.geometry_nodes[cells]
        x = np.einsum("pn,cna->cpa", vals, X)
        J = np.einsum("pnd,cna->cpad", grads, X)
        det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
        Jinv = np.empty_like(J)
        Jinv[..., 0, 0] = J[..., 1, 1] / det
        Jinv[..., 0, 1] = -J[..., 0, 1] / det
        Jinv[..., 1, 0] = -J[..., 1, 0] / det
        Jinv[..., 1, 1] = J[..., 0, 0] / det
        H = np.einsum("pnde,cna->cpade", hess, X) if hessian and self.geometry_order > 1 else None
        return GeometryValues(x=x, J=J, detJ=det, Jinv=Jinv, H=H)

    def map_edges(self, edges: np.ndarray, side: int, s: np.ndarray, hessian: bool = False):
        """Geometry at edge parameters `s` (from lo to hi) seen from the `side` cell of each edge.

        Returns (GeometryValues with leading shape (n_edges, q), reference points
        (n_edges, q, 2), outward unit normal of the side cell (n_edges, q, 2),
        length element |dx/ds| (n_edges, q)).
        """
        edges = np.asarray(edges, dtype=np.int64)
        s = np.asarray(s, dtype=float)
        cells = self.edge_cells[edges, side]
        if np.any(cells < 0):
            raise MeshError("map_edges called on a missing side of a boundary edge")
        local = self.edge_local[edges, side]
        same = self.cell_edge_same[cells, local]
        n, q = len(edges), len(s)
        x = np.empty((n, q, 2))
        J = np.empty((n, q, 2, 2))
        det = np.empty((n, q))
        Jinv = np.empty((n, q, 2, 2))
        H = np.zeros((n, q, 2, 2, 2)) if hessian and self.geometry_order > 1 else None
        ref = np.empty((n, q, 2))
        normal = np.empty((n, q, 2))
        ds = np.empty((n, q))
        for li in range(3):
            for orientation in (True, False):
                group = np.flatnonzero((local == li) & (same == orientation))
                if len(group) == 0:
                    continue
                a, b = EDGE_VERTICES[li]
                if not orientation:
                    a, b = b, a
                start, direction = REF_VERTICES[a], REF_VERTICES[b] - REF_VERTICES[a]
                points = start[None, :] + s[:, None] * direction[None, :]
                geo = self.map_points(points, cells[group], hessian=hessian)
                x[group], J[group], det[group], Jinv[group] = geo.x, geo.J, geo.detJ, geo.Jinv
                if H is not None and geo.H is not None:
                    H[group] = geo.H
                ref[group] = points[None, :, :]
                tangent = np.einsum("cqad,d->cqa", geo.J, direction)
                length = np.hypot(tangent[..., 0], tangent[..., 1])
                sign = 1.0 if orientation else -1.0
                normal[group, :, 0] = sign * tangent[..., 1] / length
                normal[group, :, 1] = -sign * tangent[..., 0] / length
                ds[group] = length
        return GeometryValues(x=x, J=J, detJ=det, Jinv=Jinv, H=H), ref, normal, ds

    def _check_positive_jacobians(self):
        curved = np.flatnonzero(self.curved_cell_mask)
        if len(curved) == 0:
            return
        rule = QuadratureFactory.triangle(2 * self.geometry_order)
        geo = self.map_points(rule.points, curved)
        if np.any(geo.detJ <= 0):
            bad = curved[np.argmax((geo.detJ <= 0).any(axis=1))]
            raise MeshError(f"Curved cell {bad} has a non-positive Jacobian")

    # -- comparison -------------------------------------------------------

    def equals(self, other: "Mesh") -> bool:
        return (
            self.geometry_order == other.geometry_order
            and np.array_equal(self.vertices, other.vertices)
            and np.array_equal(self.cells, other.cells)
            and np.array_equal(self.edges, other.edges)
            and np.array_equal(self.edge_markers, other.edge_markers)
            and np.array_equal(self.curved_edges, other.curved_edges)
            and np.array_equal(self.curved_nodes, other.curved_nodes)
        )


# -- singular vertices -----------------------------------------------------


@dataclass
class SingularVertexReport:
    threshold: float
    min_deviation: float
    flagged: List[int]
    boundary_flagged: List[int]
    deviations: np.ndarray

    @property
    def clean(self) -> bool:
        return not self.flagged and not self.boundary_flagged


def _corner_angles(vertices: np.ndarray, cells: np.ndarray):
    """Per corner (cell, local vertex): vertex, next vertex, previous vertex, angle."""
    v = cells.ravel()
    nxt = cells[:, [1, 2, 0]].ravel()
    prv = cells[:, [2, 0, 1]].ravel()
    e1 = vertices[nxt] - vertices[v]
    e2 = vertices[prv] - vertices[v]
    cross = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    dot = np.einsum("ij,ij->i", e1, e2)
    return v, nxt, prv, np.arctan2(cross, dot)


def vertex_deviations(vertices: np.ndarray, cells: np.ndarray) -> np.ndarray:
    """Max over adjacent angle pairs of |theta_i + theta_{i+1} - pi| per vertex, in degrees.

    Vertices with no adjacent pair (single-cell corners) get NaN.
    """
    n = len(vertices)
    v, nxt, prv, theta = _corner_angles(vertices, cells)
    keys = v.astype(np.int64) * n + nxt
    order = np.argsort(keys, kind="stable")
    lookup = v.astype(np.int64) * n + prv
    pos = np.searchsorted(keys[order], lookup)
    pos = np.minimum(pos, len(order) - 1)
    partner = order[pos]
    has = keys[partner] == lookup
    pair_dev = np.abs(theta[has] + theta[partner[has]] - math.pi)
    deviations = np.full(n, -np.inf)
    np.maximum.at(deviations, v[has], pair_dev)
    deviations = np.degrees(deviations)
    deviations[~np.isfinite(deviations)] = np.nan
    return deviations


def check_singular_vertices(mesh: Mesh, threshold: float = 5.0) -> SingularVertexReport:
    """Flag interior vertices whose edges lie (nearly) on two lines.

    Boundary vertices are reported separately: single-cell vertices and
    two-cell vertices whose angles sum to nearly pi.
    """
    deviations = vertex_deviations(mesh.vertices, mesh.cells)
    on_boundary = np.zeros(mesh.n_vertices, dtype=bool)
    on_boundary[mesh.boundary_vertices] = True
    counts = np.bincount(mesh.cells.ravel(), minlength=mesh.n_vertices)
    interior = ~on_boundary
    flagged = np.flatnonzero(interior & (deviations < threshold))
    boundary_flagged = np.flatnonzero(
        on_boundary & ((counts == 1) | ((counts == 2) & (deviations < threshold)))
    )
    interior_dev = deviations[interior]
    min_dev = float(np.nanmin(interior_dev)) if np.any(np.isfinite(interior_dev)) else math.inf
    report = SingularVertexReport(
        threshold=threshold,
        min_deviation=min_dev,
        flagged=[int(i) for i in flagged],
        boundary_flagged=[int(i) for i in boundary_flagged],
        deviations=deviations,
    )
    if not report.clean:
        logger.warning(
            f"Singular vertex check: {len(report.flagged)} interior and "
            f"{len(report.boundary_flagged)} boundary vertices below {threshold} degrees"
        )
    return report


# -- generation ------------------------------------------------------------


def _orient(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    return (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - (c[..., 0] - a[..., 0]) * (b[..., 1] - a[..., 1])


class MeshGenerator:
    """Graded unstructured triangulation by truss-force smoothing of Delaunay meshes."""

    DELTA_T = 0.2
    FORCE_SCALE = 1.2
    RETRIANGULATE_TOL = 0.1
    MOVE_TOL = 1e-3
    MAX_ITERATIONS = 400
    BOUNDARY_MARGIN = 0.3
    SEED = 20250917
    MAX_REPAIR_PASSES = 12
    SINGULAR_THRESHOLD = 5.0
    MIN_QUALITY = 0.1

    def __init__(self, geometry: Geometry, params: MeshParams):
        self.geometry = geometry
        self.params = params
        self.size = SizeField(geometry, params)
        x0, x1, y0, y1 = geometry.bbox
        self.tol = 1e-9 * max(x1 - x0, y1 - y0)

    def generate(self) -> Mesh:
        fixed, n_straight = boundary_points(self.geometry, self.size)
        interior = self._seed_points()
        points = np.vstack([fixed, interior])
        n_fixed = len(fixed)
        logger.info(f"Mesh seeding: {n_fixed} boundary and {len(interior)} interior points")

        points, converged, iterations = self._smooth(points, n_fixed)
        cells = self._triangulate(points)
        points, cells = self._drop_unused(points, cells, n_fixed)
        circle_ids = set(range(n_straight, n_fixed)) if self.geometry.circle is not None else set()

        cells = self._repair(points, cells, n_fixed)
        markers = self._classify_boundary(points, cells, circle_ids)
        curved = self._curved_nodes(points, markers)
        try:
            mesh = Mesh(points, cells, markers, curved, geometry_order=self.params.geometry_order)
        except Exception as e:
            raise MeshGenerationError(f"Generated mesh is invalid: {e}") from e

        quality = cell_quality(mesh)
        if not converged:
            logger.warning(f"Mesh smoothing did not converge in {iterations} iterations; min quality {quality.min():.3f}")
            if quality.min() < self.MIN_QUALITY:
                raise MeshGenerationError(
                    f"Smoothing did not converge after {iterations} iterations and the worst cell "
                    f"quality is {quality.min():.3f} (< {self.MIN_QUALITY})"
                )
        log_mesh_report(mesh)
        return mesh

    def _seed_points(self) -> np.ndarray:
        size = self.size
        x0, x1, y0, y1 = self.geometry.bbox
        rng = np.random.default_rng(self.SEED)
        levels = [size.h_max]
        while levels[-1] > size.h_min * (1.0 + 1e-12):
            levels.append(levels[-1] / 2.0)
        chunks = []
        for level, s in enumerate(levels):
            lo = s if level < len(levels) - 1 else 0.0
            hi = 2.0 * s if level > 0 else math.inf
            bx0, bx1, by0, by1 = x0, x1, y0, y1
            if level > 0 and self.geometry.circle is not None:
                reach = self.geometry.circle.radius + size.distance_for_size(hi)
                cx, cy = self.geometry.circle.center
                bx0, bx1 = max(x0, cx - reach), min(x1, cx + reach)
                by0, by1 = max(y0, cy - reach), min(y1, cy + reach)
            dy = s * math.sqrt(3.0) / 2.0
            ys = np.arange(by0 + dy / 2.0, by1, dy)
            xs = np.arange(bx0 + s / 4.0, bx1, s)
            X, Y = np.meshgrid(xs, ys)
            X = X + (np.arange(len(ys)) % 2)[:, None] * (s / 2.0)
            pts = np.stack([X.ravel(), Y.ravel()], axis=1)
            if len(pts) == 0:
                continue
            h = size(pts)
            keep = (h >= lo) & (h < hi)
            keep &= self.geometry.signed_distance(pts) < -self.BOUNDARY_MARGIN * h
            keep &= rng.random(len(pts)) < (s / h) ** 2
            chunks.append(pts[keep])
        return np.vstack(chunks) if chunks else np.zeros((0, 2))

    def _smooth(self, points: np.ndarray, n_fixed: int):
        size = self.size
        sdf = self.geometry.signed_distance
        p = points.copy()
        p_last = np.full_like(p, np.inf)
        bars = None
        for iteration in range(1, self.MAX_ITERATIONS + 1):
            h_p = size(p)
            if bars is None or np.max(np.hypot(*(p - p_last).T) / h_p) > self.RETRIANGULATE_TOL:
                p_last = p.copy()
                tri = self._triangulate(p)
                bars = np.unique(np.sort(tri[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1), axis=0)
            vec = p[bars[:, 0]] - p[bars[:, 1]]
            length = np.hypot(vec[:, 0], vec[:, 1])
            h_bar = size(0.5 * (p[bars[:, 0]] + p[bars[:, 1]]))
            target = h_bar * self.FORCE_SCALE * math.sqrt(np.sum(length**2) / np.sum(h_bar**2))
            force = np.maximum(target - length, 0.0) / length
            fvec = force[:, None] * vec
            total = np.zeros_like(p)
            np.add.at(total, bars[:, 0], fvec)
            np.add.at(total, bars[:, 1], -fvec)
            total[:n_fixed] = 0.0
            move = self.DELTA_T * total
            trial = p + move
            h_t = size(trial)
            outside = sdf(trial) > -self.BOUNDARY_MARGIN * 0.5 * h_t
            move[outside] = 0.0
            p = p + move
            free = np.arange(len(p)) >= n_fixed
            if not np.any(free):
                return p, True, iteration
            if np.max(np.hypot(*move[free].T) / h_p[free]) < self.MOVE_TOL:
                logger.info(f"Mesh smoothing converged after {iteration} iterations")
                return p, True, iteration
        return p, False, self.MAX_ITERATIONS

    def _triangulate(self, p: np.ndarray) -> np.ndarray:
        tri = Delaunay(p).simplices.astype(np.int64)
        a, b, c = p[tri[:, 0]], p[tri[:, 1]], p[tri[:, 2]]
        area = 0.5 * _orient(a, b, c)
        flip = area < 0
        tri[flip] = tri[flip][:, [0, 2, 1]]
        area = np.abs(area)
        centroid = (a + b + c) / 3.0
        h = self.size(centroid)
        keep = (self.geometry.signed_distance(centroid) < -1e-3 * h) & (area > 1e-10 * h**2)
        return tri[keep]

    @staticmethod
    def _drop_unused(points: np.ndarray, cells: np.ndarray, n_fixed: int):
        used = np.zeros(len(points), dtype=bool)
        used[cells.ravel()] = True
        if not np.all(used[:n_fixed]):
            missing = int(np.argmin(used[:n_fixed]))
            raise MeshGenerationError(f"Boundary point {missing} {tuple(points[missing])} lost in triangulation")
        if np.all(used):
            return points, cells
        remap = np.cumsum(used) - 1
        return points[used], remap[cells]

    def _repair(self, p: np.ndarray, cells: np.ndarray, n_fixed: int) -> np.ndarray:
        """Edge flips removing singular vertices and under-connected boundary vertices."""
        for repair_pass in range(self.MAX_REPAIR_PASSES):
            edges, edge_cells, edge_local, cell_edges, _ = build_topology(cells, len(p))
            candidates = self._flip_candidates(p, cells, edges, edge_cells, cell_edges)
            if not candidates:
                return cells
            touched = set()
            n_flips = 0
            for e in candidates:
                c0, c1 = edge_cells[e]
                if c1 < 0 or c0 in touched or c1 in touched:
                    continue
                new = _flip(p, cells, edges[e], c0, c1)
                if new is None:
                    continue
                cells[c0], cells[c1] = new
                touched.update((c0, c1))
                n_flips += 1
            logger.info(f"Mesh repair pass {repair_pass + 1}: {n_flips} edge flips")
            if n_flips == 0:
                break
        return cells

    def _flip_candidates(self, p, cells, edges, edge_cells, cell_edges) -> List[int]:
        n = len(p)
        boundary_edge = edge_cells[:, 1] < 0
        on_boundary = np.zeros(n, dtype=bool)
        on_boundary[edges[boundary_edge].ravel()] = True
        counts = np.bincount(cells.ravel(), minlength=n)
        deviations = vertex_deviations(p, cells)
        edge_index = {(int(a), int(b)): i for i, (a, b) in enumerate(edges)}

        def edge_of(a, b):
            return edge_index.get((min(a, b), max(a, b)))

        vertex_cells: Dict[int, List[int]] = {}
        for c, tri in enumerate(cells):
            for v in tri:
                vertex_cells.setdefault(int(v), []).append(c)

        candidates: List[int] = []
        corners = np.flatnonzero(on_boundary & (counts == 1))
        for v in corners:
            tri = cells[vertex_cells[int(v)][0]]
            others = [int(w) for w in tri if w != v]
            e = edge_of(*others)
            if e is not None and not boundary_edge[e]:
                candidates.append(e)

        weak = np.flatnonzero(on_boundary & (counts == 2) & (deviations < self.SINGULAR_THRESHOLD))
        for v in weak:
            for c in vertex_cells[int(v)]:
                others = [int(w) for w in cells[c] if w != v]
                e = edge_of(*others)
                if e is not None and not boundary_edge[e] and _flip(p, cells, edges[e], *edge_cells[e]) is not None:
                    candidates.append(e)
                    break

        singular = np.flatnonzero(~on_boundary & (deviations < self.SINGULAR_THRESHOLD))
        for v in singular:
            best, best_count = None, -1
            for c in vertex_cells[int(v)]:
                for w in cells[c]:
                    if w == v:
                        continue
                    e = edge_of(int(v), int(w))
                    if e is None or boundary_edge[e]:
                        continue
                    if counts[w] > best_count and _flip(p, cells, edges[e], *edge_cells[e]) is not None:
                        best, best_count = e, counts[w]
            if best is not None:
                candidates.append(best)
        return candidates

    def _classify_boundary(self, p: np.ndarray, cells: np.ndarray, circle_ids: set) -> Dict[Tuple[int, int], str]:
        edges, edge_cells, _, _, _ = build_topology(cells, len(p))
        markers = {}
        for e in np.flatnonzero(edge_cells[:, 1] < 0):
            a, b = (int(v) for v in edges[e])
            if a in circle_ids and b in circle_ids:
                markers[(a, b)] = "cylinder"
                continue
            name = self.geometry.segment_marker(p[a], p[b], self.tol)
            if name is None:
                raise MeshGenerationError(
                    f"Boundary edge ({a}, {b}) from {tuple(p[a])} to {tuple(p[b])} lies on no boundary segment"
                )
            markers[(a, b)] = name
        return markers

    def _curved_nodes(self, p: np.ndarray, markers: Dict[Tuple[int, int], str]) -> Dict[Tuple[int, int], np.ndarray]:
        g = self.params.geometry_order
        circle = self.geometry.circle
        if circle is None or g == 1:
            return {}
        curved = {}
        frac = np.arange(1, g) / g
        for (a, b), name in markers.items():
            if name != "cylinder":
                continue
            ta, tb = circle.angle(p[a]), circle.angle(p[b])
            delta = (tb - ta + math.pi) % (2.0 * math.pi) - math.pi
            curved[(a, b)] = circle.point(ta + frac * delta)
        return curved


def _flip(p: np.ndarray, cells: np.ndarray, edge: Sequence[int], c0: int, c1: int):
    """Cells after flipping `edge` shared by c0 and c1, or None if the quad is not convex."""
    if c1 < 0:
        return None
    x, y = int(edge[0]), int(edge[1])
    a = [int(v) for v in cells[c0] if v != x and v != y][0]
    b = [int(v) for v in cells[c1] if v != x and v != y][0]
    ox = _orient(p[a], p[b], p[x])
    oy = _orient(p[a], p[b], p[y])
    scale = np.sum((p[a] - p[b]) ** 2)
    if ox * oy >= 0 or min(abs(ox), abs(oy)) < 1e-6 * scale:
        return None
    t0 = [a, b, x] if ox > 0 else [b, a, x]
    t1 = [a, b, y] if oy > 0 else [b, a, y]
    return np.array(t0), np.array(t1)


def generate_mesh(geometry: Geometry, params: MeshParams) -> Mesh:
    return MeshGenerator(geometry, params).generate()


def hexagon_mesh(n: int, radius: float = 1.0, center: Sequence[float] = (0.0, 0.0)) -> Mesh:
    """Regular hexagon filled with 6 n^2 equilateral triangles, all boundary edges "walls".

    Every vertex sees angles of 60 degrees, so the mesh passes the singular
    vertex check for any n.
    """
    if n < 1:
        raise MeshError(f"hexagon_mesh needs n >= 1, got {n}")
    index: Dict[Tuple[int, int], int] = {}
    points = []
    for a in range(-n, n + 1):
        for b in range(-n, n + 1):
            if abs(a + b) <= n:
                index[(a, b)] = len(points)
                points.append((a + 0.5 * b, 0.5 * math.sqrt(3.0) * b))
    cells = []
    for (a, b), i in index.items():
        up = (index.get((a + 1, b)), index.get((a, b + 1)))
        if None not in up:
            cells.append((i, *up))
        down = (index.get((a + 1, b)), index.get((a + 1, b + 1)), index.get((a, b + 1)))
        if None not in down:
            cells.append(down)
    vertices = np.asarray(points) * (radius / n) + np.asarray(center, dtype=float)
    return Mesh(vertices, np.asarray(cells, dtype=np.int64))


def cell_quality(mesh: Mesh) -> np.ndarray:
    """Radius ratio 2 r_in / r_circ per cell (1 for equilateral)."""
    L = mesh.edge_lengths[mesh.cell_edges]
    a, b, c = L[:, 0], L[:, 1], L[:, 2]
    return (b + c - a) * (c + a - b) * (a + b - c) / (a * b * c)


def mesh_statistics(mesh: Mesh) -> Dict[str, float]:
    """Summary numbers used in logs and the HTTP service."""
    diam = mesh.cell_diameters
    stats = {
        "n_vertices": int(mesh.n_vertices),
        "n_cells": int(mesh.n_cells),
        "n_edges": int(mesh.n_edges),
        "n_curved_edges": int(len(mesh.curved_edges)),
        "geometry_order": int(mesh.geometry_order),
        "h_min": float(diam.min()),
        "h_max": float(diam.max()),
        "min_quality": float(cell_quality(mesh).min()),
    }
    interior = mesh.interior_edges
    if len(interior):
        d0 = diam[mesh.edge_cells[interior, 0]]
        d1 = diam[mesh.edge_cells[interior, 1]]
        stats["max_neighbour_ratio"] = float(np.max(np.maximum(d0, d1) / np.minimum(d0, d1)))
    codes = mesh.edge_markers
    if np.any(codes == MARKERS["cylinder"]):
        cyl_vertices = np.unique(mesh.edges[codes == MARKERS["cylinder"]].ravel())
        touching = np.isin(mesh.cells, cyl_vertices).any(axis=1)
        stats["h_cylinder"] = float(diam[touching].max())
    return stats


def log_mesh_report(mesh: Mesh) -> None:
    stats = mesh_statistics(mesh)
    summary = ", ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in stats.items())
    logger.info(f"Mesh report: {summary}")


# -- file format -----------------------------------------------------------
#
#   NSMESH <version>
#   counts <n_vertices> <n_cells> <n_boundary_edges> <n_curved_edges> <geometry_order>
#   vertices            one "x y" line per vertex
#   cells               one "a b c" line per cell (counter-clockwise)
#   boundary            one "a b marker" line per boundary edge
#   curved              one "a b x_1 y_1 ... x_{g-1} y_{g-1}" line per curved edge,
#                       nodes ordered from a to b
#   end
#
# Floats are written with repr(), which round-trips doubles exactly.

_BLOCKS = ("vertices", "cells", "boundary", "curved")


def save_mesh(mesh: Mesh, path: Union[str, Path]) -> None:
    path = Path(path)
    boundary = mesh.boundary_edges
    lines = [
        f"NSMESH {MESH_FORMAT_VERSION}",
        f"counts {mesh.n_vertices} {mesh.n_cells} {len(boundary)} {len(mesh.curved_edges)} {mesh.geometry_order}",
        "vertices",
    ]
    lines.extend(f"{float(x)!r} {float(y)!r}" for x, y in mesh.vertices)
    lines.append("cells")
    lines.extend(f"{a} {b} {c}" for a, b, c in mesh.cells)
    lines.append("boundary")
    lines.extend(
        f"{mesh.edges[e, 0]} {mesh.edges[e, 1]} {MARKER_NAMES[int(mesh.edge_markers[e])]}" for e in boundary
    )
    lines.append("curved")
    for e, nodes in zip(mesh.curved_edges, mesh.curved_nodes):
        coords = " ".join(f"{float(v)!r}" for v in nodes.ravel())
        lines.append(f"{mesh.edges[e, 0]} {mesh.edges[e, 1]} {coords}")
    lines.append("end")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    logger.info(f"Saved mesh with {mesh.n_cells} cells to {path}")


class _LineReader:
    def __init__(self, text: str, source: str):
        self.lines = text.splitlines()
        self.pos = 0
        self.source = source

    def next(self, expecting: str) -> Tuple[int, List[str]]:
        while self.pos < len(self.lines):
            line = self.lines[self.pos].strip()
            self.pos += 1
            if line and not line.startswith("#"):
                return self.pos, line.split()
        raise MeshFormatError(f"{self.source}: unexpected end of file, missing block '{expecting}'")

    def error(self, lineno: int, message: str) -> MeshFormatError:
        return MeshFormatError(f"{self.source}:{lineno}: {message}")


def load_mesh(path: Union[str, Path]) -> Mesh:
    path = Path(path)
    reader = _LineReader(path.read_text(), str(path))

    lineno, tokens = reader.next("header")
    if tokens[0] != "NSMESH" or len(tokens) != 2:
        raise reader.error(lineno, f"expected 'NSMESH <version>', got '{' '.join(tokens)}'")
    if tokens[1] != str(MESH_FORMAT_VERSION):
        raise reader.error(lineno, f"unsupported mesh format version {tokens[1]}")

    lineno, tokens = reader.next("counts")
    if tokens[0] != "counts" or len(tokens) != 6:
        raise reader.error(lineno, "expected 'counts <nv> <nc> <nb> <nk> <geometry_order>'")
    try:
        nv, nc, nb, nk, order = (int(t) for t in tokens[1:])
    except ValueError:
        raise reader.error(lineno, "counts must be integers")

    def block(name: str, count: int, parse):
        lineno, tokens = reader.next(name)
        if tokens != [name]:
            raise reader.error(lineno, f"expected block '{name}', got '{' '.join(tokens)}'")
        rows = []
        for _ in range(count):
            lineno, tokens = reader.next(name)
            if tokens[0] in _BLOCKS or tokens[0] == "end":
                raise reader.error(lineno, f"block '{name}' has fewer than {count} entries")
            try:
                rows.append(parse(tokens))
            except (ValueError, IndexError) as e:
                raise reader.error(lineno, f"bad {name} entry '{' '.join(tokens)}': {e}")
        return rows

    def parse_vertex(tokens):
        if len(tokens) != 2:
            raise ValueError("expected 2 coordinates")
        return float(tokens[0]), float(tokens[1])

    def parse_cell(tokens):
        if len(tokens) != 3:
            raise ValueError("expected 3 vertex indices")
        return tuple(int(t) for t in tokens)

    def parse_boundary(tokens):
        if len(tokens) != 3 or tokens[2] not in MARKERS:
            raise ValueError("expected 'a b marker' with a known marker")
        return int(tokens[0]), int(tokens[1]), tokens[2]

    def parse_curved(tokens):
        expected = 2 + 2 * (order - 1)
        if len(tokens) != expected:
            raise ValueError(f"expected {expected} fields")
        return int(tokens[0]), int(tokens[1]), np.array([float(t) for t in tokens[2:]]).reshape(-1, 2)

    vertices = block("vertices", nv, parse_vertex)
    cells = block("cells", nc, parse_cell)
    boundary = block("boundary", nb, parse_boundary)
    curved = block("curved", nk, parse_curved)
    lineno, tokens = reader.next("end")
    if tokens != ["end"]:
        raise reader.error(lineno, f"expected 'end', got '{' '.join(tokens)}'")

    try:
        mesh = Mesh(
            np.array(vertices, dtype=float).reshape(-1, 2),
            np.array(cells, dtype=np.int64).reshape(-1, 3),
            {(a, b): name for a, b, name in boundary},
            {(a, b): nodes for a, b, nodes in curved},
            geometry_order=order,
        )
    except MeshError as e:
        raise MeshFormatError(f"{path}: invalid mesh: {e}") from e
    logger.info(f"Loaded mesh with {mesh.n_cells} cells from {path}")
    return mesh
