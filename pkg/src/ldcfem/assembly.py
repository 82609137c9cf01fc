"""Linear finite element forms for constant-coefficient convection-diffusion.

The forms are

    a(u, v) = int  sum_ij a_ij d_i u d_j v + sum_i b_i d_i u v + c u v
    b(u, v) = int  m u v

and every integral is computed in closed form (gradients are constant on a
triangle; products of linears are integrated with the exact P1 mass matrix).
Matrices follow the row-test / column-trial convention ``A[k, l] = a(phi_l, phi_k)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import CoefficientError, TransferError
from .mesh import Mesh


@dataclass(frozen=True)
class ProblemCoeffs:
    diffusion: np.ndarray = field(default_factory=lambda: np.eye(2))
    convection: np.ndarray = field(default_factory=lambda: np.zeros(2))
    reaction: float = 0.0
    weight: float = 1.0

    def __post_init__(self):
        d = np.asarray(self.diffusion, dtype=float).reshape(2, 2)
        b = np.asarray(self.convection, dtype=float).reshape(2)
        object.__setattr__(self, "diffusion", d)
        object.__setattr__(self, "convection", b)
        if np.linalg.eigvalsh(0.5 * (d + d.T)).min() <= 0:
            raise CoefficientError("diffusion matrix is not uniformly elliptic")
        if not self.weight > 0:
            raise CoefficientError("weight m must be positive")

    @classmethod
    def convection_diffusion(cls, b):
        """-Laplace u + b . grad u with unit weight."""
        return cls(convection=np.asarray(b, dtype=float))

    @property
    def is_symmetric(self) -> bool:
        return bool(np.all(self.convection == 0) and np.allclose(self.diffusion, self.diffusion.T))

    def transposed(self) -> "ProblemCoeffs":
        """Coefficients of the form (u, v) -> a(v, u) for constant data."""
        return ProblemCoeffs(self.diffusion.T, -self.convection, self.reaction, self.weight)


@dataclass(frozen=True, eq=False)
class FeFunction:
    """Nodal values of a continuous piecewise-linear function on ``mesh``."""

    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.mesh.n_vertices,):
            raise ValueError(f"expected {self.mesh.n_vertices} nodal values, got {v.shape}")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_unknowns(cls, mesh: Mesh, x) -> "FeFunction":
        vals = np.zeros(mesh.n_vertices)
        vals[mesh.interior] = x
        return cls(mesh, vals)

    @property
    def unknowns(self) -> np.ndarray:
        return self.values[self.mesh.interior]

    def __call__(self, pts, outside=None):
        return self.mesh.interpolate(self.values, pts, outside=outside)

    def __mul__(self, alpha):
        return FeFunction(self.mesh, alpha * self.values)

    __rmul__ = __mul__


def _geometry(p):
    """Signed areas and barycentric gradients for triangles ``p`` of shape (T, 3, 2)."""
    x, y = p[..., 0], p[..., 1]
    area = 0.5 * ((x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0]))
    gx = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1) / (2 * area[:, None])
    gy = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1) / (2 * area[:, None])
    return np.abs(area), np.stack([gx, gy], axis=2)


_P1_MASS = (np.ones((3, 3)) + np.eye(3)) / 12.0


def element_matrices(p, coeffs: ProblemCoeffs):
    """Local a- and b-matrices, ``(T, 3, 3)`` each, indexed [test, trial]."""
    area, grad = _geometry(p)
    dg = grad @ coeffs.diffusion  # row l: grad(phi_l)^T D
    stiff = np.einsum("tlj,tkj->tkl", dg, grad)
    conv = (grad @ coeffs.convection)[:, None, :] / 3.0
    mass = _P1_MASS[None]
    a_loc = area[:, None, None] * (stiff + conv + coeffs.reaction * mass)
    b_loc = area[:, None, None] * coeffs.weight * mass
    return a_loc, b_loc


def _scatter(m: Mesh, loc):
    t = m.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    return sp.csr_matrix((loc.ravel(), (rows, cols)), shape=(m.n_vertices, m.n_vertices))


def assemble_full(m: Mesh, coeffs: ProblemCoeffs):
    """a- and b-matrices over all vertices, constrained ones included."""
    a_loc, b_loc = element_matrices(m.vertices[m.triangles], coeffs)
    A = _scatter(m, a_loc)
    B = _scatter(m, b_loc)
    A.sort_indices()
    B.sort_indices()
    return A, B


def _restrict(M, idx):
    R = M[idx][:, idx].tocsr()
    R.sort_indices()
    return R


def assemble_a(m: Mesh, coeffs: ProblemCoeffs) -> sp.csr_matrix:
    """Matrix of a(., .) on the unknowns of ``m``."""
    A, _ = assemble_full(m, coeffs)
    return _restrict(A, m.interior)


def assemble_b(m: Mesh, coeffs: ProblemCoeffs | None = None) -> sp.csr_matrix:
    """Weighted mass matrix on the unknowns of ``m``."""
    _, B = assemble_full(m, coeffs or ProblemCoeffs())
    return _restrict(B, m.interior)


def form_values(u: FeFunction, v: FeFunction, coeffs: ProblemCoeffs):
    """Exact ``(a(u, v), b(u, v))`` for two functions on the same mesh."""
    if u.mesh is not v.mesh:
        raise TransferError("both arguments must live on the same mesh")
    A, B = assemble_full(u.mesh, coeffs)
    return float(v.values @ (A @ u.values)), float(v.values @ (B @ u.values))


def prolongate(g: FeFunction, fine: Mesh) -> FeFunction:
    """Nodal interpolation of ``g`` onto a nested finer mesh.

    Exact for nested meshes; fine vertices outside ``g``'s mesh raise
    :class:`TransferError`.
    """
    vals = g.mesh.interpolate(g.values, fine.vertices)
    vals[fine.dirichlet & fine.domain.on_boundary(fine.vertices)] = 0.0
    return FeFunction(fine, vals)


def restrict_to(g: FeFunction, coarse: Mesh) -> FeFunction:
    """Injection of fine nodal values onto the vertices of a coarser mesh."""
    idx = g.mesh.vertex_index(2 ** _level_gap(coarse, g.mesh) * coarse.grid)
    if np.any(idx < 0):
        raise TransferError("coarse vertices missing from the fine mesh")
    return FeFunction(coarse, g.values[idx])


def _level_gap(coarse: Mesh, fine: Mesh) -> int:
    ratio = coarse.spacing / fine.spacing
    k = int(round(np.log2(ratio)))
    if k < 0 or abs(2.0**k - ratio) > 1e-12 or coarse.origin != fine.origin:
        raise TransferError("meshes are not dyadically nested")
    return k


def _values_on(g, target: Mesh) -> np.ndarray:
    if isinstance(g, FeFunction):
        if g.mesh is target:
            return g.values
        return g.mesh.interpolate(g.values, target.vertices)
    return g(target.vertices)


def assemble_functional(m_target: Mesh, g, lam: float, coeffs: ProblemCoeffs,
                        matrices=None) -> np.ndarray:
    """Residual ``lam * b(g, phi_k) - a(g, phi_k)`` for each unknown ``phi_k`` of ``m_target``.

    ``g`` may be an :class:`FeFunction` on a coarser nested mesh or anything
    callable at points (a composite function); its values on the constrained
    ring of ``m_target`` enter through the coupling columns.  ``matrices``
    optionally supplies the output of :func:`assemble_full` for ``m_target``.
    """
    A, B = matrices if matrices is not None else assemble_full(m_target, coeffs)
    gv = _values_on(g, m_target)
    return (lam * (B @ gv) - A @ gv)[m_target.interior]


def adjoint_functional(m_target: Mesh, g, lam: float, coeffs: ProblemCoeffs,
                       matrices=None) -> np.ndarray:
    """Adjoint residual ``lam * b(phi_k, g) - a(phi_k, g)``."""
    A, B = matrices if matrices is not None else assemble_full(m_target, coeffs)
    gv = _values_on(g, m_target)
    return (lam * (B.T @ gv) - A.T @ gv)[m_target.interior]
