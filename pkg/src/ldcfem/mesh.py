"""Structured triangulations of the model domains and their local refinements.

All meshes are restrictions of a uniform square grid in which every square is
split along its lower-left to upper-right diagonal.  Vertices carry integer
grid coordinates next to the float ones, which makes point location exact and
cheap on every mesh we build (red refinement of such a grid is again such a
grid, at half the spacing).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import AlignmentError, PartitionError, TransferError

_EPS = 1e-9
_KEY_BASE = np.int64(1) << 24


class DomainKind(str, Enum):
    LSHAPE = "lshape"
    SLIT = "slit"
    SQUARE = "square"
    RECTANGLE = "rectangle"


class SubdomainKind(str, Enum):
    SCALED_LSHAPE = "scaled_lshape"
    SCALED_SLIT = "scaled_slit"
    RECTANGLE = "rectangle"


def _in_open_box(pts, box):
    x0, x1, y0, y1 = box
    x, y = pts[:, 0], pts[:, 1]
    return (x > x0 + _EPS) & (x < x1 - _EPS) & (y > y0 + _EPS) & (y < y1 - _EPS)


def _in_closed_box(pts, box):
    x0, x1, y0, y1 = box
    x, y = pts[:, 0], pts[:, 1]
    return (x >= x0 - _EPS) & (x <= x1 + _EPS) & (y >= y0 - _EPS) & (y <= y1 + _EPS)


def _in_cut(pts, cut, scale):
    """Closed re-entrant cut anchored at the origin."""
    x, y = pts[:, 0], pts[:, 1]
    if cut == "lshape":
        return (x >= -_EPS) & (x <= scale + _EPS) & (y <= _EPS) & (y >= -scale - _EPS)
    if cut == "slit":
        return (np.abs(x) <= _EPS) & (y <= _EPS) & (y >= -scale - _EPS)
    return np.zeros(len(pts), dtype=bool)


@dataclass(frozen=True)
class DomainSpec:
    """One of the model domains.

    ``lshape`` is (-1,1)^2 minus [0,1]x[-1,0], ``slit`` is (-1,1)^2 minus
    {0}x[-1,0]; both have their singular point at the origin.
    """

    kind: DomainKind
    bounds: tuple[float, float, float, float] = (-1.0, 1.0, -1.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "kind", DomainKind(self.kind))
        if self.kind is not DomainKind.RECTANGLE:
            object.__setattr__(self, "bounds", (-1.0, 1.0, -1.0, 1.0))
        x0, x1, y0, y1 = self.bounds
        if not (x1 > x0 and y1 > y0):
            raise ValueError(f"empty domain bounds {self.bounds}")

    @classmethod
    def lshape(cls):
        return cls(DomainKind.LSHAPE)

    @classmethod
    def slit(cls):
        return cls(DomainKind.SLIT)

    @classmethod
    def square(cls):
        return cls(DomainKind.SQUARE)

    @classmethod
    def rectangle(cls, x0, x1, y0, y1):
        return cls(DomainKind.RECTANGLE, (float(x0), float(x1), float(y0), float(y1)))

    @property
    def _cut(self):
        return {DomainKind.LSHAPE: "lshape", DomainKind.SLIT: "slit"}.get(self.kind)

    @property
    def area(self) -> float:
        x0, x1, y0, y1 = self.bounds
        full = (x1 - x0) * (y1 - y0)
        return full - 1.0 if self.kind is DomainKind.LSHAPE else full

    def contains(self, pts) -> np.ndarray:
        """Points strictly inside the (open) domain."""
        pts = np.atleast_2d(pts)
        return _in_open_box(pts, self.bounds) & ~_in_cut(pts, self._cut, 1.0)

    def on_boundary(self, pts) -> np.ndarray:
        """Points on the closed boundary, slit and re-entrant edges included."""
        pts = np.atleast_2d(pts)
        closed = _in_closed_box(pts, self.bounds)
        return closed & (~_in_open_box(pts, self.bounds) | _in_cut(pts, self._cut, 1.0))


@dataclass(frozen=True)
class SubdomainSpec:
    """A local correction region, intersected with the global domain.

    ``scale`` is the half-width of the box for the scaled kinds; rectangles
    use ``box`` directly.
    """

    kind: SubdomainKind
    box: tuple[float, float, float, float]
    level: int = 1
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "kind", SubdomainKind(self.kind))

    @classmethod
    def scaled_lshape(cls, scale, level=1, name="core"):
        s = float(scale)
        return cls(SubdomainKind.SCALED_LSHAPE, (-s, s, -s, s), level, name)

    @classmethod
    def scaled_slit(cls, scale, level=1, name="core"):
        s = float(scale)
        return cls(SubdomainKind.SCALED_SLIT, (-s, s, -s, s), level, name)

    @classmethod
    def rectangle(cls, x0, x1, y0, y1, level=1, name="rect"):
        return cls(SubdomainKind.RECTANGLE, (float(x0), float(x1), float(y0), float(y1)), level, name)

    @property
    def _cut(self):
        return {SubdomainKind.SCALED_LSHAPE: "lshape", SubdomainKind.SCALED_SLIT: "slit"}.get(self.kind)

    def contains(self, pts) -> np.ndarray:
        pts = np.atleast_2d(pts)
        return _in_open_box(pts, self.box) & ~_in_cut(pts, self._cut, self.box[1])

    def contains_closed(self, pts) -> np.ndarray:
        pts = np.atleast_2d(pts)
        if self._cut == "lshape":
            s = self.box[1]
            x, y = pts[:, 0], pts[:, 1]
            in_open_cut = (x > _EPS) & (x < s - _EPS) & (y < -_EPS) & (y > -s + _EPS)
            return _in_closed_box(pts, self.box) & ~in_open_cut
        return _in_closed_box(pts, self.box)

    def boundary_segments(self) -> list[tuple[tuple[float, float], tuple[float, float]]]:
        """Sides of the bounding box (cut edges excluded)."""
        x0, x1, y0, y1 = self.box
        return [((x0, y0), (x1, y0)), ((x1, y0), (x1, y1)), ((x1, y1), (x0, y1)), ((x0, y1), (x0, y0))]


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming triangulation restricted from a uniform diagonal-split grid.

    Attributes
    ----------
    vertices : (N, 2) float array
    triangles : (T, 3) int array, counter-clockwise
    dirichlet : (N,) bool array, constrained vertices (domain boundary, and
        the interface ring for local meshes)
    grid : (N, 2) int array, ``vertices == origin + grid * spacing``
    spacing : grid step (leg length of every triangle)
    domain : the global domain the mesh lives in
    parent : optional (T,) index of the coarser triangle each one came from
    """

    vertices: np.ndarray
    triangles: np.ndarray
    dirichlet: np.ndarray
    grid: np.ndarray
    spacing: float
    domain: DomainSpec
    origin: tuple[float, float] = (-1.0, -1.0)
    parent: np.ndarray | None = field(default=None)

    def __repr__(self):
        return (f"Mesh({self.domain.kind.value}, spacing=1/{round(1 / self.spacing)}, "
                f"vertices={self.n_vertices}, triangles={self.n_triangles}, unknowns={self.n_unknowns})")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def h(self) -> float:
        """Mesh diameter (longest edge of the right triangles)."""
        return self.spacing * np.sqrt(2.0)

    @cached_property
    def interior(self) -> np.ndarray:
        """Vertex indices of the unknowns, in unknown order."""
        return np.flatnonzero(~self.dirichlet)

    @cached_property
    def dof_map(self) -> np.ndarray:
        """Vertex -> unknown index, -1 on constrained vertices."""
        dm = np.full(self.n_vertices, -1, dtype=np.int64)
        dm[self.interior] = np.arange(len(self.interior))
        return dm

    @property
    def n_unknowns(self) -> int:
        return len(self.interior)

    @cached_property
    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def areas(self) -> np.ndarray:
        return np.abs(self.signed_areas)

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    # -- point location -------------------------------------------------
    @cached_property
    def _vertex_lookup(self):
        keys = self.grid[:, 0].astype(np.int64) * _KEY_BASE + self.grid[:, 1]
        order = np.argsort(keys)
        return keys[order], order

    @cached_property
    def _triangle_lookup(self):
        g = self.grid[self.triangles]
        lo = g.min(axis=1)
        hi = g.max(axis=1)
        if np.any(hi - lo != 1):
            raise TransferError("mesh is not a diagonal-split uniform grid")
        # lower triangles contain the (i+1, j) corner
        lower = np.any((g[:, :, 0] == lo[:, None, 0] + 1) & (g[:, :, 1] == lo[:, None, 1]), axis=1)
        keys = (lo[:, 0].astype(np.int64) * _KEY_BASE + lo[:, 1]) * 2 + (~lower)
        order = np.argsort(keys)
        return keys[order], order

    def vertex_index(self, grid_ij) -> np.ndarray:
        """Vertex ids for integer grid coordinates, -1 where absent."""
        grid_ij = np.asarray(grid_ij, dtype=np.int64)
        keys, order = self._vertex_lookup
        q = grid_ij[:, 0] * _KEY_BASE + grid_ij[:, 1]
        pos = np.searchsorted(keys, q).clip(0, len(keys) - 1)
        hit = keys[pos] == q
        return np.where(hit, order[pos], -1)

    def _has_triangle(self, i, j, upper):
        keys, _ = self._triangle_lookup
        q = (i.astype(np.int64) * _KEY_BASE + j) * 2 + upper
        pos = np.searchsorted(keys, q).clip(0, len(keys) - 1)
        return keys[pos] == q

    def locate(self, pts):
        """Find a containing triangle for each point.

        Returns ``(found, corners, weights)`` where ``corners`` are the vertex
        ids of the containing triangle and ``weights`` the barycentric
        coordinates; rows with ``found == False`` are meaningless.
        """
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        g = (pts - np.asarray(self.origin)) / self.spacing
        n = len(pts)
        found = np.zeros(n, dtype=bool)
        corners = np.zeros((n, 3), dtype=np.int64)
        weights = np.zeros((n, 3))
        base = np.floor(g + _EPS).astype(np.int64)
        for di in (0, -1):
            for dj in (0, -1):
                for upper in (0, 1):
                    todo = np.flatnonzero(~found)
                    if todo.size == 0:
                        return found, corners, weights
                    i = base[todo, 0] + di
                    j = base[todo, 1] + dj
                    fx = g[todo, 0] - i
                    fy = g[todo, 1] - j
                    if upper:
                        w = np.stack([1 - fy, fx, fy - fx], axis=1)
                        cij = [(0, 0), (1, 1), (0, 1)]
                    else:
                        w = np.stack([1 - fx, fx - fy, fy], axis=1)
                        cij = [(0, 0), (1, 0), (1, 1)]
                    ok = np.all(w >= -_EPS, axis=1)
                    ok[ok] &= self._has_triangle(i[ok], j[ok], upper)
                    if not ok.any():
                        continue
                    rows = todo[ok]
                    for k, (a, b) in enumerate(cij):
                        corners[rows, k] = self.vertex_index(np.stack([i[ok] + a, j[ok] + b], axis=1))
                    weights[rows] = w[ok]
                    found[rows] = True
        return found, corners, weights

    def interpolate(self, values, pts, outside=None) -> np.ndarray:
        """Evaluate the piecewise-linear function with nodal ``values`` at ``pts``.

        Points outside the mesh get ``outside``; if ``outside`` is None they
        raise :class:`TransferError`.
        """
        values = np.asarray(values)
        found, corners, weights = self.locate(pts)
        if outside is None and not found.all():
            raise TransferError(f"{(~found).sum()} points lie outside the mesh")
        out = np.einsum("pk,pk->p", weights, values[corners])
        if not found.all():
            out[~found] = outside
        return out


def _grid_size(extent, n, what):
    cells = extent * n
    if abs(cells - round(cells)) > 1e-9:
        raise AlignmentError(f"{what} of length {extent} is not a multiple of 1/{n}")
    return int(round(cells))


def build_mesh(domain: DomainSpec, n: int) -> Mesh:
    """Uniform triangulation with ``n`` grid cells per unit length."""
    if n < 1:
        raise ValueError("need at least one subdivision per unit length")
    x0, x1, y0, y1 = domain.bounds
    nx = _grid_size(x1 - x0, n, "x-extent")
    ny = _grid_size(y1 - y0, n, "y-extent")
    if domain.kind in (DomainKind.LSHAPE, DomainKind.SLIT):
        _grid_size(0.0 - x0, n, "corner offset")
    spacing = 1.0 / n
    ii, jj = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    centers = np.stack([x0 + (ii + 0.5) * spacing, y0 + (jj + 0.5) * spacing], axis=1)
    keep = domain.contains(centers)
    ii, jj = ii[keep], jj[keep]

    stride = ny + 1
    vid = lambda a, b: a * stride + b  # noqa: E731
    lower = np.stack([vid(ii, jj), vid(ii + 1, jj), vid(ii + 1, jj + 1)], axis=1)
    upper = np.stack([vid(ii, jj), vid(ii + 1, jj + 1), vid(ii, jj + 1)], axis=1)
    tris = np.empty((2 * len(ii), 3), dtype=np.int64)
    tris[0::2] = lower
    tris[1::2] = upper

    used, tris = np.unique(tris, return_inverse=True)
    tris = tris.reshape(-1, 3)
    grid = np.stack([used // stride, used % stride], axis=1)
    verts = np.asarray([x0, y0]) + grid * spacing
    return Mesh(verts, tris, domain.on_boundary(verts), grid, spacing, domain, (x0, y0))


def _edges(triangles):
    e = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    e.sort(axis=1)
    uniq, inv, counts = np.unique(e, axis=0, return_inverse=True, return_counts=True)
    t = len(triangles)
    return uniq, inv.reshape(-1).reshape(3, t).T, counts


def refine_uniform(m: Mesh) -> Mesh:
    """Red refinement: every triangle is split into four via edge midpoints."""
    edges, tri_edge, counts = _edges(m.triangles)
    nv = m.n_vertices
    mids = m.vertices[edges].mean(axis=1)
    verts = np.concatenate([m.vertices, mids])
    grid = np.concatenate([2 * m.grid, m.grid[edges].sum(axis=1)])
    mid_dir = (counts == 1) | m.domain.on_boundary(mids)
    dirichlet = np.concatenate([m.dirichlet, mid_dir])

    a, b, c = m.triangles.T
    mab, mbc, mca = (tri_edge[:, k] + nv for k in range(3))
    children = np.stack([
        np.stack([a, mab, mca], axis=1),
        np.stack([mab, b, mbc], axis=1),
        np.stack([mca, mbc, c], axis=1),
        np.stack([mab, mbc, mca], axis=1),
    ], axis=1).reshape(-1, 3)
    parent = np.repeat(np.arange(m.n_triangles), 4)
    return Mesh(verts, children, dirichlet, grid, m.spacing / 2, m.domain, m.origin, parent)


def _check_alignment(m: Mesh, s: SubdomainSpec, selected):
    inside_v = s.contains(m.vertices)
    closed_v = s.contains_closed(m.vertices)
    if np.any(~closed_v[m.triangles[selected]]):
        raise AlignmentError(f"subdomain {s.box} cuts through mesh triangles")
    if np.any(inside_v[m.triangles[~selected]]):
        raise AlignmentError(f"subdomain {s.box} cuts through mesh triangles")


def extract_submesh(m: Mesh, s: SubdomainSpec) -> tuple[Mesh, np.ndarray]:
    """Restrict ``m`` to ``s``; the interface ring becomes Dirichlet.

    Returns the local mesh and the local-to-global vertex map.
    """
    selected = s.contains(m.centroids)
    if not selected.any():
        raise AlignmentError(f"subdomain {s.box} contains no triangles")
    _check_alignment(m, s, selected)

    # a vertex stays free only if every triangle around it was kept
    touches_outside = np.zeros(m.n_vertices, dtype=bool)
    touches_outside[m.triangles[~selected].ravel()] = True

    tris = m.triangles[selected]
    used, local = np.unique(tris, return_inverse=True)
    local = local.reshape(-1, 3)
    dirichlet = m.dirichlet[used] | touches_outside[used]
    sub = Mesh(m.vertices[used], local, dirichlet, m.grid[used], m.spacing, m.domain, m.origin)
    return sub, used


def local_mesh(coarse: Mesh, s: SubdomainSpec) -> Mesh:
    """Fine mesh on ``s``: extraction from ``coarse`` followed by one red refinement."""
    sub, _ = extract_submesh(coarse, s)
    return refine_uniform(sub)


@dataclass(frozen=True, eq=False)
class CompositePartition:
    """Cells tiling the domain once, each owned by exactly one mesh.

    ``points[cell_points]`` gives the corners of every cell; ``owner[k]``
    indexes ``meshes`` (0 is the base mesh).
    """

    points: np.ndarray
    cell_points: np.ndarray
    owner: np.ndarray
    meshes: tuple

    @property
    def cells(self) -> np.ndarray:
        return self.points[self.cell_points]

    @cached_property
    def areas(self) -> np.ndarray:
        c = self.cells
        d1 = c[:, 1] - c[:, 0]
        d2 = c[:, 2] - c[:, 0]
        return 0.5 * np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def n_cells(self) -> int:
        return len(self.cell_points)


def composite_partition(base: Mesh, corrections: Sequence[tuple[SubdomainSpec, Mesh]] = ()) -> CompositePartition:
    """Tile the domain by the finest available cells.

    Each correction mesh must be nested below the base mesh or an earlier
    correction mesh within its subdomain.  Repeated (identical) mesh objects
    are used once.
    """
    meshes = [base]
    regions = [None]
    active = [np.ones(base.n_triangles, dtype=bool)]
    seen = {id(base)}
    for s, mesh in corrections:
        if id(mesh) in seen:
            continue
        seen.add(id(mesh))
        if not np.all(s.contains(mesh.centroids)):
            raise PartitionError(f"correction mesh leaks outside its subdomain {s.box}")
        removed = 0.0
        for k, other in enumerate(meshes):
            hit = active[k] & s.contains(other.centroids)
            removed += other.areas[hit].sum()
            active[k] = active[k] & ~hit
        new = mesh.areas.sum()
        if abs(removed - new) > 1e-12 * max(new, 1.0):
            raise PartitionError(
                f"correction on {s.box} covers area {new:.15g} but replaces {removed:.15g}")
        meshes.append(mesh)
        regions.append(s)
        active.append(np.ones(mesh.n_triangles, dtype=bool))

    points, cell_points, owner = [], [], []
    offset = 0
    for k, (m, a) in enumerate(zip(meshes, active)):
        used, local = np.unique(m.triangles[a], return_inverse=True)
        points.append(m.vertices[used])
        cell_points.append(local.reshape(-1, 3) + offset)
        owner.append(np.full(a.sum(), k))
        offset += len(used)
    part = CompositePartition(np.concatenate(points), np.concatenate(cell_points),
                              np.concatenate(owner), tuple(meshes))
    total = base.areas.sum()
    if abs(part.areas.sum() - total) > 1e-12 * total:
        raise PartitionError("composite cells do not tile the base mesh")
    return part


def write_mesh(path, m: Mesh) -> None:
    """Plain-text dump: counts, then ``x y dirichlet`` rows, then triangles."""
    with open(path, "w") as fh:
        fh.write(f"{m.n_vertices} {m.n_triangles}\n")
        for (x, y), d in zip(m.vertices, m.dirichlet):
            fh.write(f"{x:.17g} {y:.17g} {int(d)}\n")
        for i, j, k in m.triangles:
            fh.write(f"{i} {j} {k}\n")


def read_mesh_dump(path):
    """Read back :func:`write_mesh` output as ``(vertices, dirichlet, triangles)``."""
    with open(path) as fh:
        nv, nt = map(int, fh.readline().split())
        rows = [fh.readline().split() for _ in range(nv)]
        verts = np.array([[float(r[0]), float(r[1])] for r in rows])
        dirichlet = np.array([r[2] == "1" for r in rows])
        tris = np.array([list(map(int, fh.readline().split())) for _ in range(nt)], dtype=np.int64)
    return verts, dirichlet, tris
