"""
Sparse direct solves with factorization reuse and iterative refinement.
"""

import hashlib
import logging
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import maximum_bipartite_matching

logger = logging.getLogger(__name__)


class SingularMatrixError(ArithmeticError):
    """The matrix cannot be factorized."""

    def __init__(self, message: str, rows: Optional[np.ndarray] = None, cols: Optional[np.ndarray] = None):
        super().__init__(message)
        self.rows = np.zeros(0, dtype=np.int64) if rows is None else rows
        self.cols = np.zeros(0, dtype=np.int64) if cols is None else cols


def matrix_stamp(A: sp.spmatrix) -> str:
    """Content hash of a sparse matrix."""
    A = sp.csr_matrix(A)
    A.sort_indices()
    digest = hashlib.sha256()
    digest.update(np.asarray(A.shape, dtype=np.int64).tobytes())
    for arr in (A.indptr, A.indices, A.data):
        digest.update(np.ascontiguousarray(arr).tobytes())
    return digest.hexdigest()


def _empty_lines(A: sp.csr_matrix):
    rows = np.flatnonzero(np.diff(A.indptr) == 0)
    cols = np.flatnonzero(np.diff(A.tocsc().indptr) == 0)
    return rows, cols


def _locate_singularity(A: sp.csr_matrix):
    """Rows and columns carrying the rank deficiency of a matrix splu rejected."""
    col_of_row = maximum_bipartite_matching(A, perm_type="column")
    row_of_col = maximum_bipartite_matching(A, perm_type="row")
    rows, cols = np.flatnonzero(col_of_row < 0), np.flatnonzero(row_of_col < 0)
    if len(rows) or len(cols):
        return rows, cols
    # numerically singular: one shifted inverse iteration on each side
    n = A.shape[0]
    shift = 1e-13 * max(abs(A).sum(axis=1).max(), 1e-300)
    try:
        lu = spla.splu((A + shift * sp.identity(n, format="csr")).tocsc(), permc_spec="COLAMD")
    except RuntimeError:
        return rows, cols
    start = np.random.default_rng(0).standard_normal(n)
    right, left = lu.solve(start), lu.solve(start, trans="T")
    cols = np.flatnonzero(np.abs(right) >= 0.5 * np.abs(right).max())
    rows = np.flatnonzero(np.abs(left) >= 0.5 * np.abs(left).max())
    return rows, cols


class Factorization:
    """LU factors of a square sparse matrix (COLAMD ordering, partial pivoting)."""

    REFINE_STEPS = 3
    RESIDUAL_TOL = 1e-16
    STAGNATION = 0.5

    def __init__(self, A: sp.spmatrix):
        A = sp.csr_matrix(A, dtype=float)
        A.eliminate_zeros()
        A.sort_indices()
        n, m = A.shape
        if n != m:
            raise ValueError(f"Cannot factorize a non-square {n}x{m} matrix")
        rows, cols = _empty_lines(A)
        if len(rows) or len(cols):
            raise SingularMatrixError(
                f"Matrix is structurally singular: zero rows {rows[:10].tolist()}, zero columns {cols[:10].tolist()}",
                rows,
                cols,
            )
        if not np.all(np.isfinite(A.data)):
            raise SingularMatrixError("Matrix has non-finite entries")
        self.A = A
        self._A_extended = A.astype(np.longdouble)
        self.shape = A.shape
        self.stamp = matrix_stamp(A)
        try:
            self._lu = spla.splu(A.tocsc(), permc_spec="COLAMD", options={"SymmetricMode": False})
        except RuntimeError as e:
            rows, cols = _locate_singularity(A)
            raise SingularMatrixError(
                f"Factorization failed ({e}): singular near rows {rows[:10].tolist()}, columns {cols[:10].tolist()}",
                rows,
                cols,
            ) from e
        self.perm_c = self._lu.perm_c
        self._condition: Optional[float] = None
        logger.debug(f"Factorized {n}x{n} matrix, nnz={A.nnz}, fill={self._lu.L.nnz + self._lu.U.nnz}")

    def _raw_solve(self, b: np.ndarray) -> np.ndarray:
        x = self._lu.solve(b)
        if not np.all(np.isfinite(x)):
            raise SingularMatrixError("Solve produced non-finite values (numerically singular matrix)")
        return x

    def condition_estimate(self) -> float:
        """1-norm condition number estimate ||A||_1 ||A^-1||_1."""
        if self._condition is None:
            n = self.shape[0]
            inverse = spla.LinearOperator(
                self.shape, matvec=self._lu.solve, rmatvec=lambda y: self._lu.solve(y, trans="T"), dtype=float
            )
            norm_a = spla.onenormest(self.A) if n > 1 else abs(self.A[0, 0])
            norm_inv = spla.onenormest(inverse) if n > 1 else abs(1.0 / self.A[0, 0])
            self._condition = float(norm_a * norm_inv)
        return self._condition

    def _extended_residual(self, x: np.ndarray, b: np.ndarray) -> np.ndarray:
        """b - A x accumulated in extended precision."""
        r = b.astype(np.longdouble) - self._A_extended @ x.astype(np.longdouble)
        return r.astype(float)

    def solve(self, b: np.ndarray, refine: Optional[int] = None) -> np.ndarray:
        """Solve A x = b; up to `refine` refinement steps (default REFINE_STEPS).

        Each step solves for a correction against the residual accumulated in
        extended precision and stops once the correction no longer shrinks.
        """
        b = np.asarray(b, dtype=float)
        x = self._raw_solve(b)
        steps = self.REFINE_STEPS if refine is None else refine
        previous = np.inf
        for step in range(steps):
            dx = self._raw_solve(self._extended_residual(x, b))
            size = np.linalg.norm(dx, np.inf)
            if size > self.STAGNATION * previous:
                logger.debug(f"Refinement stagnated after {step} steps")
                break
            x = x + dx
            previous = size
            if size <= self.RESIDUAL_TOL * np.linalg.norm(x, np.inf):
                break
        return x

    def residual(self, x: np.ndarray, b: np.ndarray) -> float:
        """Scaled backward error ||Ax - b|| / (||A|| ||x|| + ||b||) in the inf-norm."""
        r = self._extended_residual(x, b)
        norm_a = abs(self.A).sum(axis=1).max() if self.A.nnz else 0.0
        denom = norm_a * np.linalg.norm(x, np.inf) + np.linalg.norm(b, np.inf)
        return float(np.linalg.norm(r, np.inf) / denom) if denom > 0 else 0.0


def factorize(A: sp.spmatrix) -> Factorization:
    """LU factors of A; raises SingularMatrixError with the offending rows and columns."""
    return Factorization(A)


def solve(A: sp.spmatrix, b: np.ndarray, refine: Optional[int] = None) -> np.ndarray:
    return Factorization(A).solve(b, refine=refine)
