import numpy as np
import pytest
import scipy.sparse as sp

from ldcfem import linalg
from ldcfem.assembly import ProblemCoeffs, assemble_a
from ldcfem.errors import ResidualError, SingularMatrixError
from ldcfem.linalg import Factorization, factorize, solve, solve_transpose
from ldcfem.mesh import DomainSpec, build_mesh


def _dominant(rng, n, symmetric=False):
    M = rng.standard_normal((n, n))
    if symmetric:
        M = M + M.T
    M += np.diag(np.abs(M).sum(axis=1) + 1.0)
    return M


def test_tridiagonal_by_hand():
    A = sp.diags([-1, 2, -1], [-1, 0, 1], shape=(4, 4))
    x = solve(factorize(A), np.ones(4))
    assert np.allclose(x, [2, 3, 3, 2], atol=1e-14)


def test_identity():
    f = factorize(sp.identity(5))
    rhs = np.arange(5.0)
    assert np.array_equal(f.solve(rhs), rhs)
    assert np.array_equal(f.solve(np.zeros(5)), np.zeros(5))
    assert abs(f.L - sp.identity(5)).max() == 0
    assert abs(f.U - sp.identity(5)).max() == 0


def test_factors_reproduce_permuted_matrix(rng):
    A = sp.csc_matrix(_dominant(rng, 30) * (rng.random((30, 30)) < 0.2) + 10 * np.eye(30))
    f = factorize(A)
    Pr = sp.csc_matrix((np.ones(30), (f.perm_r, np.arange(30))))
    Pc = sp.csc_matrix((np.ones(30), (np.arange(30), f.perm_c)))
    assert abs(Pr @ A @ Pc - f.L @ f.U).max() < 1e-12


def test_dense_oracle(rng):
    M = _dominant(rng, 50)
    f = factorize(sp.csr_matrix(M))
    b = rng.standard_normal(50)
    assert np.allclose(f.solve(b), np.linalg.solve(M, b), atol=1e-10)
    assert np.allclose(solve_transpose(f, b), np.linalg.solve(M.T, b), atol=1e-10)


def test_transpose_consistency(rng):
    S = _dominant(rng, 20, symmetric=True)
    f = factorize(S)
    b = rng.standard_normal(20)
    assert np.allclose(f.solve(b), f.solve_transpose(b), atol=1e-12)
    M = _dominant(rng, 20)
    ft = factorize(M.T)
    assert np.allclose(ft.solve_transpose(b), factorize(M).solve(b), atol=1e-12)


def test_solve_inverts_matvec(rng):
    M = _dominant(rng, 12)
    f = factorize(M)
    X = rng.standard_normal((12, 100))
    for x in X.T:
        assert np.allclose(f.solve(M @ x), x, atol=1e-9)
        assert f.residual_ok(f.solve(M @ x), M @ x)


def test_fem_matrix_factorizes():
    m = build_mesh(DomainSpec.lshape(), 32)
    A = assemble_a(m, ProblemCoeffs.convection_diffusion((0, 3)))
    f = factorize(A)
    b = np.ones(A.shape[0])
    x = f.solve(b)
    assert f.backward_error(x, b) <= linalg.RESIDUAL_TOL
    y = f.solve_transpose(b)
    assert f.backward_error(y, b, transpose=True) <= linalg.RESIDUAL_TOL


def test_singular_matrix_rejected():
    A = sp.csr_matrix(np.array([[1.0, 2.0], [2.0, 4.0]]))
    with pytest.raises(SingularMatrixError):
        Factorization(A)
    with pytest.raises(SingularMatrixError):
        Factorization(sp.csr_matrix((3, 3)))


def test_shape_checks():
    with pytest.raises(ValueError):
        Factorization(sp.csr_matrix(np.ones((2, 3))))
    f = factorize(sp.identity(3))
    with pytest.raises(ValueError):
        f.solve(np.ones(4))


def test_checked_solves_record_backward_error(monkeypatch, rng):
    monkeypatch.setattr(linalg, "CHECK_RESIDUALS", True)
    monkeypatch.setattr(linalg, "solve_stats", {"count": 0, "max_backward_error": 0.0})
    f = factorize(_dominant(rng, 10))
    f.solve(np.ones(10))
    f.solve_transpose(np.ones(10))
    assert linalg.solve_stats["count"] == 2
    assert linalg.solve_stats["max_backward_error"] <= linalg.RESIDUAL_TOL
    # a corrupted solve trips the check
    f._lu = factorize(np.eye(10))._lu
    with pytest.raises(ResidualError):
        f.solve(np.ones(10))
