from fractions import Fraction

import numpy as np
import pytest

from ldcfem.errors import AlignmentError, PartitionError
from ldcfem.mesh import (DomainSpec, SubdomainSpec, build_mesh, composite_partition,
                         extract_submesh, local_mesh, read_mesh_dump, refine_uniform, write_mesh)
from ldcfem.scheme import dof_estimate


@pytest.mark.parametrize("n", [16, 32, 64, 128, 256])
def test_lshape_dof_formula(n):
    m = build_mesh(DomainSpec.lshape(), n)
    # (2n+1)^2 lattice points, minus the removed quadrant, minus the boundary
    assert m.n_unknowns == 3 * n * n - 4 * n + 1
    assert m.n_unknowns == dof_estimate(m.domain, n)


@pytest.mark.parametrize("n", [16, 32, 64, 128])
def test_slit_dof_formula(n):
    m = build_mesh(DomainSpec.slit(), n)
    assert m.n_unknowns == (2 * n - 1) ** 2 - n
    assert m.n_unknowns == dof_estimate(m.domain, n)


def test_table_dofs():
    assert [dof_estimate(DomainSpec.lshape(), n) for n in (16, 32, 64, 128)] == [705, 2945, 12033, 48641]
    assert [dof_estimate(DomainSpec.slit(), n) for n in (16, 32, 64, 128)] == [945, 3937, 16065, 64897]


def test_smallest_square():
    m = build_mesh(DomainSpec.square(), 1)
    assert m.n_vertices == 9
    assert m.n_unknowns == 1
    assert np.allclose(m.vertices[m.interior], [[0.0, 0.0]])


def test_triangles_positively_oriented(model_domain):
    m = build_mesh(model_domain, 8)
    assert np.all(m.signed_areas > 0)
    assert m.areas.sum() == pytest.approx(model_domain.area, abs=1e-13)
    assert m.h == pytest.approx(np.sqrt(2) / 8)


def test_slit_vertices_are_dirichlet():
    m = build_mesh(DomainSpec.slit(), 8)
    on_slit = (np.abs(m.vertices[:, 0]) < 1e-14) & (m.vertices[:, 1] <= 0)
    assert on_slit.sum() == 9
    assert m.dirichlet[on_slit].all()
    # no vertex is duplicated across the slit
    assert len(np.unique(m.grid, axis=0)) == m.n_vertices


def test_misaligned_domain_rejected():
    with pytest.raises(AlignmentError):
        build_mesh(DomainSpec.rectangle(0, 1.3, 0, 1), 4)
    with pytest.raises(ValueError):
        build_mesh(DomainSpec.square(), 0)


def test_refinement_matches_direct_construction(model_domain):
    fine = refine_uniform(build_mesh(model_domain, 4))
    direct = build_mesh(model_domain, 8)
    assert fine.spacing == direct.spacing
    key_f = {tuple(g) for g in fine.grid}
    key_d = {tuple(g) for g in direct.grid}
    assert key_f == key_d
    idx = direct.vertex_index(fine.grid)
    assert np.array_equal(direct.dirichlet[idx], fine.dirichlet)
    tri_f = {tuple(sorted(t)) for t in idx[fine.triangles]}
    tri_d = {tuple(sorted(t)) for t in direct.triangles}
    assert tri_f == tri_d


def test_children_nested_in_parents():
    coarse = build_mesh(DomainSpec.lshape(), 4)
    fine = refine_uniform(coarse)
    area = np.bincount(fine.parent, weights=fine.areas)
    assert np.allclose(area, coarse.areas, atol=1e-15)
    found, corners, _ = coarse.locate(fine.centroids)
    assert found.all()
    assert np.array_equal(np.sort(corners, axis=1), np.sort(coarse.triangles[fine.parent], axis=1))


def test_locate_weights_reproduce_points(rng):
    m = build_mesh(DomainSpec.slit(), 8)
    pts = rng.uniform(-1, 1, size=(500, 2))
    pts = pts[m.domain.contains(pts)]
    found, corners, w = m.locate(pts)
    assert found.all()
    assert np.allclose(np.einsum("pk,pkd->pd", w, m.vertices[corners]), pts, atol=1e-14)
    assert np.all(w >= -1e-14)


def test_extract_submesh_interface_ring():
    m = build_mesh(DomainSpec.lshape(), 8)
    s = SubdomainSpec.scaled_lshape(Fraction(1, 2))
    sub, used = extract_submesh(m, s)
    assert sub.areas.sum() == pytest.approx(0.75, abs=1e-14)
    assert np.allclose(sub.vertices, m.vertices[used])
    ring = np.isclose(np.abs(sub.vertices).max(axis=1), 0.5)
    assert sub.dirichlet[ring].all()
    free = sub.vertices[~sub.dirichlet]
    assert np.all(np.abs(free).max(axis=1) < 0.5)


def test_local_mesh_halves_step():
    m = build_mesh(DomainSpec.lshape(), 8)
    s = SubdomainSpec.scaled_lshape(Fraction(1, 2))
    loc = local_mesh(m, s)
    assert loc.spacing == m.spacing / 2
    # same unknown count as the level before: the window shrinks as the mesh refines
    s2 = SubdomainSpec.scaled_lshape(Fraction(1, 4), level=2)
    loc2 = local_mesh(loc, s2)
    assert loc2.n_unknowns == loc.n_unknowns


def test_misaligned_subdomain_rejected():
    m = build_mesh(DomainSpec.lshape(), 4)
    with pytest.raises(AlignmentError):
        extract_submesh(m, SubdomainSpec.scaled_lshape(0.3))


@pytest.mark.parametrize("kind,area", [("lshape", 3.0), ("slit", 4.0)])
def test_composite_partition_conserves_area(kind, area):
    dom = DomainSpec(kind)
    base = build_mesh(dom, 8)
    maker = SubdomainSpec.scaled_lshape if kind == "lshape" else SubdomainSpec.scaled_slit
    s1, s2 = maker(Fraction(1, 2), 1), maker(Fraction(1, 4), 2)
    m1 = local_mesh(base, s1)
    m2 = local_mesh(m1, s2)
    part = composite_partition(base, [(s1, m1), (s2, m2)])
    assert abs(part.areas.sum() - area) <= 1e-12
    owned = np.bincount(part.owner, weights=part.areas)
    assert owned[2] == pytest.approx(m2.areas.sum(), abs=1e-14)
    # repeated meshes are counted once
    again = composite_partition(base, [(s1, m1), (s1, m1), (s2, m2)])
    assert again.n_cells == part.n_cells


def test_partition_rejects_leaking_correction():
    base = build_mesh(DomainSpec.lshape(), 8)
    s1 = SubdomainSpec.scaled_lshape(Fraction(1, 2), 1)
    m1 = local_mesh(base, s1)
    with pytest.raises(PartitionError):
        composite_partition(base, [(SubdomainSpec.scaled_lshape(Fraction(1, 4), 1), m1)])


def test_mesh_dump_roundtrip(tmp_path):
    m = build_mesh(DomainSpec.slit(), 4)
    path = tmp_path / "mesh.txt"
    write_mesh(path, m)
    v, d, t = read_mesh_dump(path)
    assert np.array_equal(v, m.vertices)
    assert np.array_equal(d, m.dirichlet)
    assert np.array_equal(t, m.triangles)
