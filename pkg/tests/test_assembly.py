import numpy as np
import pytest
import scipy.sparse as sp

from ldcfem.assembly import (FeFunction, ProblemCoeffs, adjoint_functional, assemble_a, assemble_b,
                             assemble_full, assemble_functional, element_matrices, form_values,
                             prolongate, restrict_to)
from ldcfem.eigen import coarse_eigenpair
from ldcfem.errors import CoefficientError, TransferError
from ldcfem.mesh import DomainSpec, build_mesh, refine_uniform


def _is_spd(M):
    D = M.toarray()
    return np.allclose(D, D.T, atol=1e-14) and np.linalg.eigvalsh(D).min() > 0


def test_laplacian_spd(model_domain):
    m = build_mesh(model_domain, 4)
    assert _is_spd(assemble_a(m, ProblemCoeffs()))
    assert _is_spd(assemble_b(m))


@pytest.mark.parametrize("b", [(0, 3), (1, 1), (0, 10), (-2.5, 0.7)])
def test_convection_is_skew(model_domain, b):
    m = build_mesh(model_domain, 8)
    C = assemble_a(m, ProblemCoeffs.convection_diffusion(b)) - assemble_a(m, ProblemCoeffs())
    assert abs(C + C.T).max() <= 1e-12
    assert abs(C).max() > 0


def test_constant_in_kernel_away_from_boundary():
    m = build_mesh(DomainSpec.square(), 4)
    A, _ = assemble_full(m, ProblemCoeffs.convection_diffusion((1, 2)))
    row = A @ np.ones(m.n_vertices)
    # vertex (0, 0) has no boundary neighbour
    k = m.vertex_index(np.array([[4, 4]]))[0]
    assert abs(row[k]) < 1e-13


def test_mass_sums_to_area(model_domain):
    m = build_mesh(model_domain, 8)
    _, B = assemble_full(m, ProblemCoeffs())
    assert B.sum() == pytest.approx(model_domain.area, abs=1e-12)
    _, B2 = assemble_full(m, ProblemCoeffs(weight=2.5))
    assert B2.sum() == pytest.approx(2.5 * model_domain.area, abs=1e-12)


def test_unit_right_triangle():
    p = np.array([[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]])
    a_loc, b_loc = element_matrices(p, ProblemCoeffs())
    assert np.allclose(np.diag(b_loc[0]), 1 / 12)
    assert np.allclose(b_loc[0][0, 1], 1 / 24)
    assert np.allclose(a_loc[0], [[1, -0.5, -0.5], [-0.5, 0.5, 0], [-0.5, 0, 0.5]])


def test_convection_element_against_quadrature():
    # a(phi_l, phi_k) convection part = int b.grad(phi_l) phi_k = |T|/3 b.grad(phi_l)
    p = np.array([[[0.1, 0.2], [0.9, 0.3], [0.4, 1.1]]])
    b = np.array([0.7, -1.3])
    a_b, _ = element_matrices(p, ProblemCoeffs.convection_diffusion(b))
    a_0, _ = element_matrices(p, ProblemCoeffs())
    C = (a_b - a_0)[0]
    x, y = p[0, :, 0], p[0, :, 1]
    area = 0.5 * abs((x[1] - x[0]) * (y[2] - y[0]) - (x[2] - x[0]) * (y[1] - y[0]))
    V = np.column_stack([np.ones(3), x, y])
    grads = np.linalg.inv(V)[1:].T  # row l: grad phi_l
    expected = np.tile(area / 3 * grads @ b, (3, 1))
    assert np.allclose(C, expected, atol=1e-14)


def test_anisotropic_diffusion_orientation():
    D = np.array([[2.0, 0.3], [0.1, 1.0]])
    m = build_mesh(DomainSpec.square(), 4)
    rng = np.random.default_rng(3)
    u = FeFunction.from_unknowns(m, rng.standard_normal(m.n_unknowns))
    v = FeFunction.from_unknowns(m, rng.standard_normal(m.n_unknowns))
    a, _ = form_values(u, v, ProblemCoeffs(diffusion=D))
    # piecewise-constant gradients: sum over triangles of |T| grad(v)^T D grad(u)
    t = m.triangles
    area = m.areas
    tot = 0.0
    for k in range(len(t)):
        P = m.vertices[t[k]]
        G = np.linalg.inv(np.column_stack([np.ones(3), P]))[1:]
        tot += area[k] * (G @ v.values[t[k]]) @ D @ (G @ u.values[t[k]])
    assert a == pytest.approx(tot, rel=1e-12)


def test_transposed_coefficients():
    m = build_mesh(DomainSpec.lshape(), 4)
    c = ProblemCoeffs.convection_diffusion((0.5, 2.0))
    A = assemble_a(m, c)
    At = assemble_a(m, c.transposed())
    assert abs(A.T - At).max() < 1e-13


def test_bad_coefficients():
    with pytest.raises(CoefficientError):
        ProblemCoeffs(diffusion=[[1, 0], [0, -1]])
    with pytest.raises(CoefficientError):
        ProblemCoeffs(weight=0.0)


def test_prolongation_restriction_roundtrip(rng):
    coarse = build_mesh(DomainSpec.slit(), 4)
    fine = refine_uniform(refine_uniform(coarse))
    g = FeFunction.from_unknowns(coarse, rng.standard_normal(coarse.n_unknowns))
    pg = prolongate(g, fine)
    assert np.allclose(restrict_to(pg, coarse).values, g.values, atol=1e-15)
    # integral preserved
    _, Bc = assemble_full(coarse, ProblemCoeffs())
    _, Bf = assemble_full(fine, ProblemCoeffs())
    assert (Bf @ pg.values).sum() == pytest.approx((Bc @ g.values).sum(), abs=1e-12)
    # function values agree at random points
    pts = rng.uniform(-1, 1, (200, 2))
    pts = pts[coarse.domain.contains(pts)]
    assert np.allclose(g(pts), pg(pts), atol=1e-13)


def test_prolongate_constant_interior():
    coarse = build_mesh(DomainSpec.square(), 2)
    fine = refine_uniform(coarse)
    one = FeFunction(coarse, np.ones(coarse.n_vertices))
    p = prolongate(one, fine)
    assert np.allclose(p.values[~fine.dirichlet], 1.0)


def test_prolongate_non_nested_rejected():
    m = build_mesh(DomainSpec.square(), 2)
    other = build_mesh(DomainSpec.rectangle(-1, 2, -1, 1), 4)
    with pytest.raises(TransferError):
        prolongate(FeFunction(m, np.zeros(m.n_vertices)), other)


def test_functional_vanishes_on_eigenpair():
    m = build_mesh(DomainSpec.lshape(), 8)
    c = ProblemCoeffs.convection_diffusion((0, 3))
    e = coarse_eigenpair(m, c, tol=1e-12)
    F = assemble_functional(m, e.u, e.lam, c)
    Fa = adjoint_functional(m, e.u_adj, e.lam, c)
    scale = np.linalg.norm(assemble_b(m) @ e.u.unknowns) * e.lam
    assert np.linalg.norm(F) < 1e-10 * scale
    assert np.linalg.norm(Fa) < 1e-10 * scale
    assert np.all(assemble_functional(m, FeFunction(m, np.zeros(m.n_vertices)), 0.0, c) == 0)


def test_functionals_coincide_when_symmetric(rng):
    m = build_mesh(DomainSpec.slit(), 4)
    c = ProblemCoeffs()
    g = FeFunction.from_unknowns(m, rng.standard_normal(m.n_unknowns))
    assert np.allclose(assemble_functional(m, g, 2.0, c), adjoint_functional(m, g, 2.0, c), atol=1e-14)


def test_full_matrices_restrict_to_unknowns():
    m = build_mesh(DomainSpec.lshape(), 4)
    c = ProblemCoeffs.convection_diffusion((1, 1))
    A, B = assemble_full(m, c)
    idx = m.interior
    assert abs(sp.csr_matrix(A[idx][:, idx]) - assemble_a(m, c)).max() == 0
    assert abs(sp.csr_matrix(B[idx][:, idx]) - assemble_b(m, c)).max() == 0
