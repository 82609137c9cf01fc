"""Sparse LU factorization with transpose solves, backed by SuperLU."""
from __future__ import annotations

import os

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import ResidualError, SingularMatrixError

#: column ordering handed to SuperLU; recorded in run metadata
ORDERING = "COLAMD"
PIVOT_THRESHOLD = 0.1
RESIDUAL_TOL = 1e-10

#: check every solve against the backward-error bound (debug runs)
CHECK_RESIDUALS = os.environ.get("LDCFEM_CHECK_RESIDUALS", "") not in ("", "0")
#: largest relative backward error seen by checked solves
solve_stats = {"count": 0, "max_backward_error": 0.0}


class Factorization:
    """LU factors ``Pr A Pc = L U`` usable for ``A x = b`` and ``A^T x = b``.

    Immutable after construction; concurrent solves are fine.
    """

    def __init__(self, A):
        A = sp.csc_matrix(A)
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"matrix must be square, got {A.shape}")
        self.A = A
        self.shape = A.shape
        self.norm_max = float(abs(A).max()) if A.nnz else 0.0
        try:
            self._lu = splu(A, permc_spec=ORDERING, diag_pivot_thresh=PIVOT_THRESHOLD,
                            options={"SymmetricMode": False})
        except RuntimeError as exc:
            raise SingularMatrixError(str(exc)) from exc
        udiag = np.abs(self._lu.U.diagonal())
        if A.shape[0] and udiag.min() <= 1e-14 * max(self.norm_max, 1.0):
            raise SingularMatrixError(f"near-zero pivot {udiag.min():.3e}")

    @property
    def L(self):
        return self._lu.L

    @property
    def U(self):
        return self._lu.U

    @property
    def perm_r(self):
        return self._lu.perm_r

    @property
    def perm_c(self):
        return self._lu.perm_c

    def _check(self, rhs):
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape[0] != self.shape[0]:
            raise ValueError(f"right-hand side has length {rhs.shape[0]}, expected {self.shape[0]}")
        return rhs

    def solve(self, rhs) -> np.ndarray:
        rhs = self._check(rhs)
        x = self._lu.solve(rhs)
        if CHECK_RESIDUALS:
            self._verify(x, rhs, False)
        return x

    def solve_transpose(self, rhs) -> np.ndarray:
        rhs = self._check(rhs)
        x = self._lu.solve(rhs, trans="T")
        if CHECK_RESIDUALS:
            self._verify(x, rhs, True)
        return x

    def backward_error(self, x, rhs, transpose=False) -> float:
        """``|A x - b| / (|A|_max |x| + |b|)``."""
        Ax = self.A.T @ x if transpose else self.A @ x
        scale = self.norm_max * np.linalg.norm(x) + np.linalg.norm(rhs)
        return float(np.linalg.norm(Ax - rhs) / scale) if scale > 0 else 0.0

    def residual_ok(self, x, rhs, transpose=False) -> bool:
        return self.backward_error(x, rhs, transpose) <= RESIDUAL_TOL

    def _verify(self, x, rhs, transpose):
        err = self.backward_error(x, rhs, transpose)
        solve_stats["count"] += 1
        solve_stats["max_backward_error"] = max(solve_stats["max_backward_error"], err)
        if err > RESIDUAL_TOL:
            raise ResidualError(f"backward error {err:.2e} exceeds {RESIDUAL_TOL:g}")


def factorize(A) -> Factorization:
    return Factorization(A)


def solve(f: Factorization, rhs) -> np.ndarray:
    return f.solve(rhs)


def solve_transpose(f: Factorization, rhs) -> np.ndarray:
    return f.solve_transpose(rhs)
