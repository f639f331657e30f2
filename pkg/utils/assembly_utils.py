"""
Vectorized sparse assembly over cell chunks and edge sets.

Cells are split into fixed-size chunks (straight and curved cells use
different quadrature degrees). Chunks can be processed by a thread pool; the
per-chunk triplets are always merged in chunk order, so matrices do not depend
on the worker count.
"""

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from utils.mesh_utils import GeometryValues, Mesh
from utils.quadrature_utils import QuadratureFactory
from utils.space_utils import FESpace, SpaceTable

logger = logging.getLogger(__name__)

CHUNK_SIZE = 256
TABLE_CACHE_LIMIT = 4e7  # floats kept per integrator


class AssemblyError(ValueError):
    """Inconsistent spaces or quadrature request."""


def assembly_threads() -> int:
    try:
        return max(1, int(os.getenv("NSBENCH_THREADS", "1")))
    except ValueError:
        logger.warning(f"Ignoring invalid NSBENCH_THREADS={os.getenv('NSBENCH_THREADS')!r}")
        return 1


@dataclass
class CellChunk:
    cells: np.ndarray
    points: np.ndarray
    weights: np.ndarray
    geo: GeometryValues
    dx: np.ndarray  # (c, q) quadrature weight times |detJ|


def _table_size(table: SpaceTable) -> int:
    return sum(a.size for a in (table.values, table.grads, table.div) if a is not None)


class CellIntegrator:
    """Quadrature over all cells of a mesh with degree inflation on curved cells."""

    def __init__(self, mesh: Mesh, degree: int, threads: Optional[int] = None, chunk_size: int = CHUNK_SIZE):
        self.mesh = mesh
        self.degree = degree
        self.threads = threads or assembly_threads()
        self.chunks: List[CellChunk] = []
        curved = mesh.curved_cell_mask
        inflation = 2 * (mesh.geometry_order - 1)
        for mask, deg in ((~curved, degree), (curved, degree + inflation)):
            cells = np.flatnonzero(mask)
            if len(cells) == 0:
                continue
            rule = QuadratureFactory.triangle(deg)
            for start in range(0, len(cells), chunk_size):
                sel = cells[start:start + chunk_size]
                geo = mesh.map_points(rule.points, sel, hessian=deg > degree)
                if np.any(geo.detJ <= 0):
                    raise AssemblyError("Non-positive Jacobian at a quadrature point")
                self.chunks.append(CellChunk(sel, rule.points, rule.weights, geo, geo.detJ * rule.weights[None, :]))
        self._tables: Dict[int, List[SpaceTable]] = {}
        self._cached_floats = 0

    def _check(self, space: FESpace):
        if space.mesh is not self.mesh:
            raise AssemblyError(f"{space!r} lives on a different mesh")

    def table(self, space: FESpace, index: int) -> SpaceTable:
        cached = self._tables.get(id(space))
        if cached is not None:
            return cached[index]
        chunk = self.chunks[index]
        return space.tabulate(chunk.geo, chunk.points, chunk.cells)

    def cache(self, *spaces: FESpace) -> None:
        """Keep the tabulations of `spaces` for repeated assembly, memory permitting."""
        for space in spaces:
            self._check(space)
            if id(space) in self._tables:
                continue
            tables = [space.tabulate(c.geo, c.points, c.cells) for c in self.chunks]
            size = sum(_table_size(t) for t in tables)
            if self._cached_floats + size > TABLE_CACHE_LIMIT:
                logger.info(f"Not caching tables of {space!r}: {size:.3g} floats over the limit")
                continue
            self._cached_floats += size
            self._tables[id(space)] = tables

    def _map(self, fn: Callable[[int], object]) -> list:
        if self.threads > 1 and len(self.chunks) > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                return list(pool.map(fn, range(len(self.chunks))))
        return [fn(i) for i in range(len(self.chunks))]

    def field(self, space: FESpace, coeffs: np.ndarray, index: int):
        """Values, gradients and divergence of a discrete field on one chunk."""
        table = self.table(space, index)
        local = coeffs[space.cell_dofs[self.chunks[index].cells]]
        values = np.einsum("cqn...,cn->cq...", table.values, local)
        grads = None if table.grads is None else np.einsum("cqn...,cn->cq...", table.grads, local)
        div = None if table.div is None else np.einsum("cqn...,cn->cq...", table.div, local)
        return values, grads, div

    def assemble_matrix(self, test: FESpace, trial: FESpace, kernel) -> sp.csr_matrix:
        """kernel(test_table, trial_table, chunk, index) -> (c, n_test, n_trial)."""
        self._check(test)
        self._check(trial)

        def work(i):
            chunk = self.chunks[i]
            local = kernel(self.table(test, i), self.table(trial, i), chunk, i)
            rows = np.broadcast_to(test.cell_dofs[chunk.cells][:, :, None], local.shape)
            cols = np.broadcast_to(trial.cell_dofs[chunk.cells][:, None, :], local.shape)
            return rows.ravel(), cols.ravel(), local.ravel()

        parts = self._map(work)
        return _coo_to_csr(parts, (test.n_dofs, trial.n_dofs))

    def assemble_vector(self, test: FESpace, kernel) -> np.ndarray:
        """kernel(test_table, chunk, index) -> (c, n_test)."""
        self._check(test)

        def work(i):
            chunk = self.chunks[i]
            local = kernel(self.table(test, i), chunk, i)
            return test.cell_dofs[chunk.cells].ravel(), local.ravel()

        parts = self._map(work)
        idx = np.concatenate([p[0] for p in parts])
        vals = np.concatenate([p[1] for p in parts])
        return np.bincount(idx, weights=vals, minlength=test.n_dofs)

    def integrate(self, fn: Callable[[CellChunk, int], np.ndarray]) -> Tuple[float, float]:
        """Integral of fn (c, q) and the sum of absolute per-cell contributions."""
        per_cell = self._map(lambda i: np.sum(fn(self.chunks[i], i) * self.chunks[i].dx, axis=1))
        cells = np.concatenate(per_cell) if per_cell else np.zeros(0)
        return float(np.sum(cells)), float(np.sum(np.abs(cells)))


def _coo_to_csr(parts, shape) -> sp.csr_matrix:
    rows = np.concatenate([p[0] for p in parts]) if parts else np.zeros(0, dtype=np.int64)
    cols = np.concatenate([p[1] for p in parts]) if parts else np.zeros(0, dtype=np.int64)
    vals = np.concatenate([p[2] for p in parts]) if parts else np.zeros(0)
    matrix = sp.coo_matrix((vals, (rows, cols)), shape=shape).tocsr()
    matrix.sum_duplicates()
    matrix.sort_indices()
    return matrix


class FacetIntegrator:
    """Quadrature on a set of edges, evaluated from both adjacent cells.

    `normal` is the unit normal pointing out of side 0; `ds` already contains
    the quadrature weights.
    """

    def __init__(self, mesh: Mesh, degree: int, edges: np.ndarray):
        self.mesh = mesh
        self.edges = np.asarray(edges, dtype=np.int64)
        deg = degree + 2 * (mesh.geometry_order - 1)
        self.rule = QuadratureFactory.interval(deg)
        self.interior = bool(len(self.edges)) and bool(np.all(mesh.edge_cells[self.edges, 1] >= 0))
        if len(self.edges) and not self.interior and np.any(mesh.edge_cells[self.edges, 1] >= 0):
            raise AssemblyError("FacetIntegrator needs either only interior or only boundary edges")
        self._tables: Dict[Tuple[int, int], SpaceTable] = {}
        if len(self.edges) == 0:
            self.x = np.zeros((0, len(self.rule.points), 2))
            self.normal = np.zeros((0, len(self.rule.points), 2))
            self.ds = np.zeros((0, len(self.rule.points)))
            self.h = np.zeros(0)
            self.markers = np.zeros(0, dtype=np.int64)
            return
        geo, _, normal, ds = mesh.map_edges(self.edges, 0, self.rule.points)
        self.x = geo.x
        self.normal = normal
        self.ds = ds * self.rule.weights[None, :]
        self.h = mesh.facet_sizes[self.edges]
        self.markers = mesh.edge_markers[self.edges]

    @property
    def n_sides(self) -> int:
        return 2 if self.interior else 1

    def table(self, space: FESpace, side: int) -> SpaceTable:
        key = (id(space), side)
        if key not in self._tables:
            table, _, _, _ = space.tabulate_edges(self.edges, side, self.rule.points)
            self._tables[key] = table
        return self._tables[key]

    def dofs(self, space: FESpace, side: int) -> np.ndarray:
        return space.cell_dofs[self.mesh.edge_cells[self.edges, side]]

    def field(self, space: FESpace, coeffs: np.ndarray, side: int):
        table = self.table(space, side)
        local = coeffs[self.dofs(space, side)]
        values = np.einsum("eqn...,en->eq...", table.values, local)
        grads = None if table.grads is None else np.einsum("eqn...,en->eq...", table.grads, local)
        return values, grads

    def assemble_matrix(self, test: FESpace, trial: FESpace, local: np.ndarray) -> sp.csr_matrix:
        """Scatter local matrices over the concatenated side dofs [side 0, side 1]."""
        rows = np.hstack([self.dofs(test, s) for s in range(self.n_sides)])
        cols = np.hstack([self.dofs(trial, s) for s in range(self.n_sides)])
        r = np.broadcast_to(rows[:, :, None], local.shape).ravel()
        c = np.broadcast_to(cols[:, None, :], local.shape).ravel()
        return _coo_to_csr([(r, c, local.ravel())], (test.n_dofs, trial.n_dofs))

    def assemble_vector(self, test: FESpace, local: np.ndarray) -> np.ndarray:
        rows = np.hstack([self.dofs(test, s) for s in range(self.n_sides)])
        return np.bincount(rows.ravel(), weights=local.ravel(), minlength=test.n_dofs)


@dataclass
class DirichletCondition:
    dofs: np.ndarray
    values: np.ndarray

    def full(self, n: int) -> np.ndarray:
        g = np.zeros(n)
        g[self.dofs] = self.values
        return g

    def apply(self, A: sp.spmatrix, b: np.ndarray) -> Tuple[sp.csr_matrix, np.ndarray]:
        """Symmetric elimination: rows/columns zeroed, unit diagonal, rhs lifted."""
        n = A.shape[0]
        g = self.full(n)
        rhs = b - A @ g
        rhs[self.dofs] = self.values
        return constrain_matrix(A, self.dofs), rhs


def constrain_matrix(A: sp.spmatrix, dofs: np.ndarray) -> sp.csr_matrix:
    n = A.shape[0]
    mask = np.zeros(n)
    mask[dofs] = 1.0
    keep = sp.diags(1.0 - mask)
    out = (keep @ A @ keep + sp.diags(mask)).tocsr()
    out.eliminate_zeros()
    out.sort_indices()
    return out


def apply_dirichlet(space: FESpace, markers: Iterable[str], value_function, A: sp.spmatrix, b: np.ndarray):
    """Constrain the dofs of `space` on the marked boundary to `value_function`.

    For BDM only normal-trace dofs are constrained. `A` and `b` may be larger
    than the space (blocks after it are left untouched).
    """
    dofs, values = space.boundary_values(list(markers), value_function)
    condition = DirichletCondition(dofs, values)
    A_c, b_c = condition.apply(A, b)
    return A_c, b_c, condition
