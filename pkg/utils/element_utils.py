import logging
from functools import lru_cache
from typing import List, Tuple

import numpy as np
from numpy.polynomial import legendre

from utils.quadrature_utils import QuadratureFactory

logger = logging.getLogger(__name__)

REF_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
# Local edge i is opposite local vertex i, traversed counter-clockwise.
EDGE_VERTICES = ((1, 2), (2, 0), (0, 1))

# Trace-free 2x2 basis used by the stress space.
DEVIATORIC_BASIS = np.array(
    [
        [[1.0, 0.0], [0.0, -1.0]],
        [[0.0, 1.0], [0.0, 0.0]],
        [[0.0, 0.0], [1.0, 0.0]],
    ]
)


class ElementError(ValueError):
    """Invalid element family or order."""


def monomial_exponents(order: int) -> List[Tuple[int, int]]:
    return [(a, total - a) for total in range(order + 1) for a in range(total, -1, -1)]


def _powers(x: np.ndarray, exponent: int) -> np.ndarray:
    return x ** max(exponent, 0)


def evaluate_monomials(exponents, points: np.ndarray, derivatives: int = 0):
    """Monomial values, gradients and Hessians at `points` (n, 2)."""
    x, y = points[:, 0], points[:, 1]
    n, m = len(points), len(exponents)
    values = np.empty((n, m))
    grads = np.zeros((n, m, 2)) if derivatives >= 1 else None
    hess = np.zeros((n, m, 2, 2)) if derivatives >= 2 else None
    for j, (a, b) in enumerate(exponents):
        values[:, j] = _powers(x, a) * _powers(y, b)
        if derivatives >= 1:
            grads[:, j, 0] = a * _powers(x, a - 1) * _powers(y, b)
            grads[:, j, 1] = b * _powers(x, a) * _powers(y, b - 1)
        if derivatives >= 2:
            hess[:, j, 0, 0] = a * (a - 1) * _powers(x, a - 2) * _powers(y, b)
            hess[:, j, 1, 1] = b * (b - 1) * _powers(x, a) * _powers(y, b - 2)
            hess[:, j, 0, 1] = a * b * _powers(x, a - 1) * _powers(y, b - 1)
            hess[:, j, 1, 0] = hess[:, j, 0, 1]
    return values, grads, hess


class LagrangeElement:
    """Nodal P_k on the reference triangle.

    Nodes are ordered vertices, then edge nodes (from the local start vertex of
    each edge), then interior lattice nodes. Order 0 is a single centroid node.
    """

    family = "Lagrange"

    def __init__(self, order: int):
        if order < 0:
            raise ElementError(f"Lagrange order must be >= 0, got {order}")
        self.order = order
        self.exponents = monomial_exponents(order)
        self.nodes, self.vertex_dofs, self.edge_dofs, self.interior_dofs = self._build_nodes(order)
        vandermonde, _, _ = evaluate_monomials(self.exponents, self.nodes)
        self._coeffs = np.linalg.inv(vandermonde)

    @staticmethod
    def _build_nodes(k: int):
        if k == 0:
            return np.array([[1.0 / 3.0, 1.0 / 3.0]]), [[], [], []], [[], [], []], [0]
        nodes = [REF_VERTICES[i] for i in range(3)]
        vertex_dofs = [[0], [1], [2]]
        edge_dofs = []
        for a, b in EDGE_VERTICES:
            start = len(nodes)
            for j in range(1, k):
                nodes.append(REF_VERTICES[a] + (j / k) * (REF_VERTICES[b] - REF_VERTICES[a]))
            edge_dofs.append(list(range(start, len(nodes))))
        start = len(nodes)
        for j in range(1, k):
            for i in range(1, k - j):
                nodes.append(np.array([i / k, j / k]))
        interior_dofs = list(range(start, len(nodes)))
        return np.array(nodes), vertex_dofs, edge_dofs, interior_dofs

    @property
    def dim(self) -> int:
        return len(self.exponents)

    @property
    def barycentric_nodes(self) -> np.ndarray:
        x, y = self.nodes[:, 0], self.nodes[:, 1]
        return np.stack([1.0 - x - y, x, y], axis=1)

    def tabulate(self, points: np.ndarray, derivatives: int = 1):
        """Values (n, dim), gradients (n, dim, 2), Hessians (n, dim, 2, 2)."""
        vals, grads, hess = evaluate_monomials(self.exponents, points, derivatives)
        values = vals @ self._coeffs
        g = np.einsum("pmd,mj->pjd", grads, self._coeffs) if grads is not None else None
        h = np.einsum("pmde,mj->pjde", hess, self._coeffs) if hess is not None else None
        return values, g, h


class BDMElement:
    """Brezzi-Douglas-Marini BDM_k with moment degrees of freedom.

    Edge dofs are Legendre moments of the normal component along each local
    edge; interior dofs are moments against grad P_{k-1} and curl(b P_{k-2})
    with b the cubic bubble.
    """

    family = "BDM"

    def __init__(self, order: int):
        if order < 1:
            raise ElementError(f"BDM order must be >= 1, got {order}")
        self.order = order
        self.exponents = monomial_exponents(order)
        self.n_edge = order + 1
        self.edge_dofs = [list(range(e * self.n_edge, (e + 1) * self.n_edge)) for e in range(3)]
        self.functional_points, self.functional_weights = self._build_functionals()
        self.interior_dofs = list(range(3 * self.n_edge, self.functional_weights.shape[0]))
        basis_vals, _ = self._vector_monomials(self.functional_points, derivatives=0)
        matrix = np.einsum("ipa,pma->im", self.functional_weights, basis_vals)
        if matrix.shape[0] != matrix.shape[1]:
            raise ElementError(f"BDM_{order} functional count mismatch: {matrix.shape}")
        self._coeffs = np.linalg.inv(matrix)

    @property
    def dim(self) -> int:
        return 2 * len(self.exponents)

    def _vector_monomials(self, points: np.ndarray, derivatives: int = 1):
        vals, grads, _ = evaluate_monomials(self.exponents, points, derivatives)
        n, m = vals.shape
        v = np.zeros((n, 2 * m, 2))
        v[:, :m, 0] = vals
        v[:, m:, 1] = vals
        g = None
        if grads is not None:
            g = np.zeros((n, 2 * m, 2, 2))
            g[:, :m, 0, :] = grads
            g[:, m:, 1, :] = grads
        return v, g

    def _build_functionals(self):
        k = self.order
        edge_rule = QuadratureFactory.interval(2 * k)
        cell_rule = QuadratureFactory.triangle(2 * k)
        points = []
        for a, b in EDGE_VERTICES:
            t = REF_VERTICES[b] - REF_VERTICES[a]
            points.append(REF_VERTICES[a] + np.outer(edge_rule.points, t))
        points.append(cell_rule.points)
        all_points = np.vstack(points)
        n_edge_pts = len(edge_rule.points)
        offset_cell = 3 * n_edge_pts

        rows = []
        for e, (a, b) in enumerate(EDGE_VERTICES):
            t = REF_VERTICES[b] - REF_VERTICES[a]
            scaled_normal = np.array([t[1], -t[0]])
            for j in range(k + 1):
                leg = legendre.legval(2.0 * edge_rule.points - 1.0, np.eye(k + 1)[j])
                w = np.zeros((len(all_points), 2))
                sl = slice(e * n_edge_pts, (e + 1) * n_edge_pts)
                w[sl] = (edge_rule.weights * leg)[:, None] * scaled_normal[None, :]
                rows.append(w)

        cp = cell_rule.points
        cw = cell_rule.weights
        if k >= 2:
            _, grads, _ = evaluate_monomials(monomial_exponents(k - 1), cp, derivatives=1)
            for j in range(1, grads.shape[1]):
                w = np.zeros((len(all_points), 2))
                w[offset_cell:] = cw[:, None] * grads[:, j, :]
                rows.append(w)
            x, y = cp[:, 0], cp[:, 1]
            bubble = x * y * (1.0 - x - y)
            bubble_grad = np.stack([y - 2 * x * y - y * y, x - x * x - 2 * x * y], axis=1)
            qv, qg, _ = evaluate_monomials(monomial_exponents(k - 2), cp, derivatives=1)
            for j in range(qv.shape[1]):
                grad_phi = qv[:, j, None] * bubble_grad + bubble[:, None] * qg[:, j, :]
                curl_phi = np.stack([grad_phi[:, 1], -grad_phi[:, 0]], axis=1)
                w = np.zeros((len(all_points), 2))
                w[offset_cell:] = cw[:, None] * curl_phi
                rows.append(w)
        return all_points, np.array(rows)

    def tabulate(self, points: np.ndarray, derivatives: int = 1):
        """Values (n, dim, 2), gradients (n, dim, 2, 2) with [a, b] = d_b v_a, divergence (n, dim)."""
        v, g = self._vector_monomials(points, derivatives=max(derivatives, 1))
        values = np.einsum("pma,mj->pja", v, self._coeffs)
        grads = np.einsum("pmab,mj->pjab", g, self._coeffs)
        div = grads[:, :, 0, 0] + grads[:, :, 1, 1]
        return values, grads, div

    def apply_functionals(self, values: np.ndarray) -> np.ndarray:
        """Apply all functionals to field values sampled at `functional_points`.

        `values` has shape (..., n_points, 2); returns (..., dim).
        """
        return np.einsum("ipa,...pa->...i", self.functional_weights, values)


class StressElement:
    """Broken trace-free P_k tensors: a scalar Lagrange basis times three deviatoric tensors."""

    family = "Stress"

    def __init__(self, order: int):
        if order < 0:
            raise ElementError(f"Stress order must be >= 0, got {order}")
        self.order = order
        self.scalar = LagrangeElement(order)

    @property
    def dim(self) -> int:
        return 3 * self.scalar.dim

    def tabulate(self, points: np.ndarray, derivatives: int = 1):
        """Tensor values (n, dim, 2, 2) and the scalar reference gradients (n, dim_scalar, 2)."""
        s, g, _ = self.scalar.tabulate(points, derivatives=1)
        values = np.einsum("ps,cab->pcsab", s, DEVIATORIC_BASIS).reshape(len(points), self.dim, 2, 2)
        return values, g


@lru_cache(maxsize=None)
def lagrange_element(order: int) -> LagrangeElement:
    return LagrangeElement(order)


@lru_cache(maxsize=None)
def bdm_element(order: int) -> BDMElement:
    return BDMElement(order)


@lru_cache(maxsize=None)
def stress_element(order: int) -> StressElement:
    return StressElement(order)


def eval_basis(family: str, order: int, points: np.ndarray, derivative_order: int = 0):
    """Reference basis values (and derivatives) for `family` at `points`.

    Piola transforms are applied by the physical-mapping layer in the spaces.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if family in ("Lagrange", "DG"):
        values, grads, hess = lagrange_element(order).tabulate(points, derivatives=derivative_order)
        return (values, grads, hess)[: derivative_order + 1]
    if family == "BDM":
        values, grads, _ = bdm_element(order).tabulate(points)
        return (values, grads)[: min(derivative_order, 1) + 1]
    if family == "Stress":
        values, grads = stress_element(order).tabulate(points)
        return (values, grads)[: min(derivative_order, 1) + 1]
    raise ElementError(f"Unknown element family '{family}'")


def legendre_on_unit(order: int, s: np.ndarray) -> np.ndarray:
    """Legendre polynomials P_0..P_order evaluated at 2 s - 1; shape (len(s), order + 1)."""
    return legendre.legvander(2.0 * np.asarray(s) - 1.0, order)


def edge_normal_sign(order: int, same_direction: bool) -> np.ndarray:
    """Signs mapping local BDM edge moments to moments in the global edge orientation."""
    if same_direction:
        return np.ones(order + 1)
    return np.array([(-1.0) ** (j + 1) for j in range(order + 1)])
