"""Global functions made of a mesoscopic base plus nested local corrections."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assembly import FeFunction, ProblemCoeffs, element_matrices
from .mesh import CompositePartition, SubdomainSpec, composite_partition


@dataclass(frozen=True, eq=False)
class CompositeFunction:
    """``base + sum(corrections)``; each correction vanishes outside its subdomain.

    Corrections live on local meshes and are zero on the interface ring, so
    the sum is continuous.
    """

    base: FeFunction
    corrections: tuple[tuple[SubdomainSpec, FeFunction], ...] = ()

    def __call__(self, pts) -> np.ndarray:
        pts = np.atleast_2d(pts)
        out = self.base(pts)
        for s, e in self.corrections:
            near = s.contains_closed(pts)
            if near.any():
                out[near] += e(pts[near], outside=0.0)
        return out

    def with_corrections(self, new) -> "CompositeFunction":
        return CompositeFunction(self.base, self.corrections + tuple(new))

    def scaled(self, alpha: float) -> "CompositeFunction":
        return CompositeFunction(alpha * self.base, tuple((s, alpha * e) for s, e in self.corrections))

    @property
    def pieces(self):
        """``(subdomain, mesh)`` pairs in correction order."""
        return [(s, e.mesh) for s, e in self.corrections]


def as_composite(f) -> CompositeFunction:
    return f if isinstance(f, CompositeFunction) else CompositeFunction(f)


def joint_partition(*funcs) -> CompositePartition:
    """Partition on which every function in ``funcs`` is linear per cell."""
    funcs = [as_composite(f) for f in funcs]
    base = funcs[0].base.mesh
    pieces = []
    for f in funcs:
        if f.base.mesh is not base:
            raise ValueError("composites must share the base mesh")
        pieces.extend(f.pieces)
    pieces.sort(key=lambda p: p[0].level)
    return composite_partition(base, pieces)


def _cell_values(f, part: CompositePartition) -> np.ndarray:
    return f(part.points)[part.cell_points]


def composite_forms(u, v, part: CompositePartition, coeffs: ProblemCoeffs,
                    with_norms: bool = False, chunk: int = 200_000):
    """Exact ``(a(u, v), b(u, v))`` by summing closed-form integrals over ``part``.

    With ``with_norms`` also returns ``b(u, u)`` and ``b(v, v)``.
    """
    U = _cell_values(u, part)
    V = U if v is u else _cell_values(v, part)
    sums = np.zeros(4)
    for start in range(0, part.n_cells, chunk):
        sl = slice(start, start + chunk)
        a_loc, b_loc = element_matrices(part.points[part.cell_points[sl]], coeffs)
        sums[0] += np.einsum("tk,tkl,tl->", V[sl], a_loc, U[sl])
        sums[1] += np.einsum("tk,tkl,tl->", V[sl], b_loc, U[sl])
        if with_norms:
            sums[2] += np.einsum("tk,tkl,tl->", U[sl], b_loc, U[sl])
            sums[3] += np.einsum("tk,tkl,tl->", V[sl], b_loc, V[sl])
    if with_norms:
        return tuple(float(x) for x in sums)
    return float(sums[0]), float(sums[1])
