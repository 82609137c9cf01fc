"""Smallest eigenpairs of the discrete pencil and generalized Rayleigh quotients."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .assembly import FeFunction, ProblemCoeffs, assemble_a, assemble_b
from .composite import as_composite, composite_forms, joint_partition
from .errors import DegeneratePairingError, SingularMatrixError, UnsupportedSpectrumError
from .linalg import Factorization
from .mesh import Mesh

log = logging.getLogger(__name__)

MAX_ITER = 200


@dataclass(frozen=True, eq=False)
class EigenResult:
    lam: float
    u: FeFunction
    u_adj: FeFunction
    pairing: float
    residual: float
    residual_adj: float
    multiplicity: int = 1

    @property
    def mesh(self) -> Mesh:
        return self.u.mesh


def _b_normalize(x, B):
    return x / np.sqrt(x @ (B @ x))


def _eig_residual(A, B, lam, x):
    Bx = B @ x
    return np.linalg.norm(A @ x - lam * Bx) / np.linalg.norm(Bx)


def _inverse_iteration(A, B, apply_inv, x, tol, max_iter):
    """Returns ``(lam, x, converged, history)``."""
    x = _b_normalize(x, B)
    history = []
    lam = x @ (A @ x)
    for _ in range(max_iter):
        y = apply_inv(B @ x)
        x = _b_normalize(y, B)
        lam = x @ (A @ x)
        res = _eig_residual(A, B, lam, x)
        history.append(res)
        if res <= tol:
            return lam, x, True, history
    return lam, x, False, history


def _fix_sign(x):
    s = x.sum()
    return -x if s < 0 else x


def _smallest(A, B, tol, fac, transpose, x0=None):
    A_op = A.T.tocsr() if transpose else A
    n = A.shape[0]
    x0 = np.ones(n) if x0 is None else x0
    if fac is None:
        fac = Factorization(A)
    inv = fac.solve_transpose if transpose else fac.solve
    lam, x, ok, hist = _inverse_iteration(A_op, B, inv, x0, tol, MAX_ITER)
    if not ok:
        # retry once with a Rayleigh-quotient shift
        log.info("shift-invert at 0 stalled (residual %.2e); shifting to %.6g", hist[-1], lam)
        try:
            shifted = Factorization(A - lam * B)
        except SingularMatrixError:
            return lam, _fix_sign(x)
        sinv = shifted.solve_transpose if transpose else shifted.solve
        lam, x, ok, hist2 = _inverse_iteration(A_op, B, sinv, x, tol, MAX_ITER)
        if not ok:
            tail = np.asarray(hist2[-10:])
            raise UnsupportedSpectrumError(
                f"inverse iteration did not converge (last residuals {tail[-3:]}); "
                "the target eigenvalue may be complex or clustered")
    return float(lam), _fix_sign(x)


def solve_smallest(A, B, tol: float = 1e-10, factorization: Factorization | None = None):
    """Eigenpair of ``A x = lam B x`` with eigenvalue closest to 0.

    Shift-invert (inverse) iteration with shift 0.  ``x`` is B-normalized.
    """
    return _smallest(A, B, tol, factorization, transpose=False)


def solve_adjoint_smallest(A, B, lam_hint: float, tol: float = 1e-10,
                           factorization: Factorization | None = None):
    """Left eigenpair ``A^T y = lam B y`` for the same target eigenvalue."""
    lam, y = _smallest(A, B, tol, factorization, transpose=True)
    if abs(lam - lam_hint) > 1e-8 * abs(lam_hint):
        raise UnsupportedSpectrumError(
            f"left eigenvalue {lam!r} does not match right eigenvalue {lam_hint!r}")
    return lam, y


def adjoint_align(u: FeFunction, basis: Sequence[FeFunction], B) -> FeFunction:
    """L2-projection of ``u`` onto span(basis), normalized, with b(u, u*) > 0.

    ``B`` is the mass matrix on the unknowns of ``u``'s mesh.
    """
    if not basis:
        raise ValueError("empty adjoint basis")
    Phi = np.stack([phi.unknowns for phi in basis], axis=1)
    BPhi = B @ Phi
    gram = Phi.T @ BPhi
    rhs = BPhi.T @ u.unknowns
    alpha = np.linalg.solve(gram, rhs)
    proj = Phi @ alpha
    norm = np.sqrt(proj @ (B @ proj))
    if not norm > 1e-10:
        raise DegeneratePairingError("u_H is orthogonal to the adjoint eigenspace")
    proj = proj / norm
    if u.unknowns @ (B @ proj) < 0:
        proj = -proj
    return FeFunction.from_unknowns(u.mesh, proj)


def coarse_eigenpair(mesh: Mesh, coeffs: ProblemCoeffs, tol: float = 1e-10,
                     ascent: int = 1) -> EigenResult:
    """Primal and aligned adjoint eigenpair on ``mesh``, one factorization."""
    if ascent != 1:
        raise UnsupportedSpectrumError("only ascent 1 is supported")
    A = assemble_a(mesh, coeffs)
    B = assemble_b(mesh, coeffs)
    fac = Factorization(A)
    lam, x = solve_smallest(A, B, tol, fac)
    u = FeFunction.from_unknowns(mesh, x)
    if coeffs.is_symmetric:
        y = x
        lam_adj = lam
    else:
        lam_adj, y = solve_adjoint_smallest(A, B, lam, tol, fac)
    u_adj = adjoint_align(u, [FeFunction.from_unknowns(mesh, y)], B)
    y = u_adj.unknowns
    # two-sided quotient: error is the product of both residuals
    lam = float(y @ (A @ x)) / float(y @ (B @ x))
    lam_adj = lam
    return EigenResult(
        lam=lam,
        u=u,
        u_adj=u_adj,
        pairing=float(x @ (B @ y)),
        residual=_eig_residual(A, B, lam, x),
        residual_adj=_eig_residual(A.T.tocsr(), B, lam_adj, y),
    )


def rayleigh_quotient(u, u_adj, part=None, coeffs: ProblemCoeffs | None = None) -> float:
    """``a(u, u*) / b(u, u*)`` over composite functions, integrated exactly."""
    coeffs = coeffs or ProblemCoeffs()
    same = u_adj is u
    u = as_composite(u)
    u_adj = u if same else as_composite(u_adj)
    if part is None:
        part = joint_partition(u, u_adj)
    a_val, b_val, bu, bv = composite_forms(u, u_adj, part, coeffs, with_norms=True)
    if abs(b_val) <= 1e-10 * np.sqrt(bu * bv):
        raise DegeneratePairingError(f"b(u, u*) = {b_val:.3e}")
    return a_val / b_val
