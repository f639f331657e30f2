#!/usr/bin/env python3
"""
Sparse factorization: accuracy, refinement, singularity reporting.
"""

import numpy as np
import pytest
import scipy.sparse as sp

from utils.form_utils import FluidParams
from utils.linsolve_utils import Factorization, SingularMatrixError, factorize, matrix_stamp, solve
from utils.mesh_utils import hexagon_mesh
from utils.scheme_utils import SchemeConfig, create_scheme


def laplacian_1d(n: int) -> sp.csr_matrix:
    return sp.diags([-np.ones(n - 1), 2.0 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1], format="csr")


def test_solve_accuracy():
    A = laplacian_1d(200) + sp.diags(np.linspace(0.0, 1.0, 200), format="csr")
    x = np.sin(np.arange(200))
    b = A @ x
    factor = Factorization(A)
    x_h = factor.solve(b)
    assert np.allclose(x_h, x, rtol=1e-10, atol=1e-10)
    assert factor.residual(x_h, b) < 1e-14
    assert np.allclose(solve(A, b, refine=0), x, atol=1e-8)


def test_zero_row_and_column_are_reported():
    A = laplacian_1d(6).tolil()
    A[3, :] = 0.0
    A[:, 3] = 0.0
    with pytest.raises(SingularMatrixError) as info:
        Factorization(A.tocsr())
    assert info.value.rows.tolist() == [3]
    assert info.value.cols.tolist() == [3]


def test_non_square_rejected():
    with pytest.raises(ValueError):
        Factorization(sp.csr_matrix(np.ones((2, 3))))


def test_non_finite_entries_rejected():
    A = sp.csr_matrix(np.array([[1.0, 0.0], [0.0, np.nan]]))
    with pytest.raises(SingularMatrixError):
        Factorization(A)


def test_condition_estimate():
    A = sp.diags([1.0, 10.0, 1e4], format="csr")
    estimate = Factorization(A).condition_estimate()
    assert 1e3 < estimate <= 1e4 * (1.0 + 1e-9)
    assert Factorization(laplacian_1d(50)).condition_estimate() > 100.0


def test_matrix_stamp():
    A = laplacian_1d(10)
    B = A.copy()
    assert matrix_stamp(A) == matrix_stamp(B)
    B[0, 0] = 2.0 + 1e-12
    assert matrix_stamp(A) != matrix_stamp(B)
    assert Factorization(A).stamp == matrix_stamp(A)


def test_factorize_pivots():
    factor = factorize(sp.csr_matrix(np.array([[0.0, 1.0], [1.0, 0.0]])))
    np.testing.assert_allclose(factor.solve(np.array([2.0, 3.0])), [3.0, 2.0])


def test_numerically_singular_block_is_located():
    block = sp.csr_matrix(np.array([[1.0, 1.0], [1.0, 1.0]]))
    A = sp.block_diag([sp.identity(2), block, sp.identity(2)], format="csr")
    with pytest.raises(SingularMatrixError) as info:
        factorize(A)
    assert info.value.rows.tolist() == [2, 3]
    assert info.value.cols.tolist() == [2, 3]
    assert "rows [2, 3]" in str(info.value)


def test_structurally_singular_columns_are_located():
    A = sp.csr_matrix(np.array([[1.0, 1.0, 1.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]))
    with pytest.raises(SingularMatrixError) as info:
        factorize(A)
    assert len(info.value.rows) == 1 and info.value.rows[0] in (1, 2)
    assert len(info.value.cols) == 1 and info.value.cols[0] in (1, 2)


def test_refinement_on_penalized_mcs_operator():
    nu = 0.02
    config = SchemeConfig(scheme="MCS", order=2, dt=0.01, fluid=FluidParams(nu=nu))
    solver = create_scheme(config, hexagon_mesh(3))
    assert solver.epsilon == pytest.approx(1e-12 / nu)
    K = solver._operator("sbdf2", 1.5 / solver.dt)
    V = solver.velocity_space
    b = solver.M @ V.interpolate(lambda x: np.stack([-x[:, 1], x[:, 0]], axis=1))

    factor = factorize(K)
    assert factor.condition_estimate() > 1e9
    plain = factor.solve(b, refine=0)
    refined = factor.solve(b)
    assert factor.residual(plain, b) < 1e-14
    assert factor.residual(refined, b) < 1e-14


if __name__ == "__main__":
    pytest.main([__file__])
