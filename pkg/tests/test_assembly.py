import numpy as np
import pytest

from conftest import reference_mesh, solve
from fluxfem.assembly import (
    FeSpace,
    apply_dirichlet,
    assemble_load,
    assemble_stiffness,
    nodal_interpolant,
)
from fluxfem.element import simplex_quadrature
from fluxfem.mesh import build_structured
from fluxfem.solver import cg_solve
from fluxfem.study import builtin_problem


def local_block(space, mat):
    dofs = space.cell_dofs[0]
    return mat.toarray()[np.ix_(dofs, dofs)]


def test_reference_triangle_stiffness():
    space = FeSpace(reference_mesh(2), 1)
    ke = local_block(space, assemble_stiffness(space))
    expected = [[1, -0.5, -0.5], [-0.5, 0.5, 0], [-0.5, 0, 0.5]]
    np.testing.assert_allclose(ke, expected, atol=1e-14)


def test_reference_triangle_load():
    space = FeSpace(reference_mesh(2), 1)
    b = assemble_load(space, 1.0)
    np.testing.assert_allclose(b[space.cell_dofs[0]], [1 / 6] * 3, atol=1e-15)


@pytest.mark.parametrize("dim,level,k", [(2, 3, 1), (2, 2, 3), (3, 2, 2), (3, 1, 4)])
def test_stiffness_properties(dim, level, k):
    space = FeSpace(build_structured(dim, level), k)
    mat = assemble_stiffness(space)
    assert space.dof_total == (space.mesh.cells_per_edge * k + 1) ** dim
    assert abs(mat - mat.T).max() <= 1e-14 * abs(mat).max()
    assert np.abs(mat @ np.ones(space.dof_total)).max() < 1e-11
    scaled = assemble_stiffness(space, 3.5)
    assert abs(scaled - 3.5 * mat).max() < 1e-12 * abs(mat).max()
    assert assemble_load(space, 1.0).sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(assemble_load(space, 0.0) == 0)


def test_rejects_nonpositive_alpha():
    space = FeSpace(build_structured(2, 2), 1)
    with pytest.raises(ValueError):
        assemble_stiffness(space, lambda x: x[..., 0] - 0.5)


@pytest.mark.parametrize("dim,level,k", [(2, 2, 3), (3, 2, 2)])
def test_shared_nodes_have_equal_indices(dim, level, k):
    space = FeSpace(build_structured(dim, level), k)
    coords = np.einsum("bi,cid->cbd", space.basis.nodes, space.mesh.cell_vertices)
    np.testing.assert_allclose(space.node_coords[space.cell_dofs], coords, atol=1e-14)
    assert len(np.unique(space.cell_dofs)) == space.dof_total


def test_dirichlet_sizes():
    space = FeSpace(build_structured(2, 1), 1)
    red = apply_dirichlet(assemble_stiffness(space), assemble_load(space, 1.0), space)
    assert red.matrix.shape == (0, 0)
    space = FeSpace(build_structured(2, 3), 1)
    mat, rhs, free = apply_dirichlet(assemble_stiffness(space), assemble_load(space, 1.0), space)
    assert mat.shape == (9, 9) and len(free) == 9 == space.dof_interior
    assert abs(mat - mat.T).max() <= 1e-14
    assert np.all(np.linalg.eigvalsh(mat.toarray()) > 0)


@pytest.mark.parametrize("dim,k", [(2, 1), (2, 3), (3, 2)])
def test_interpolant_reproduces_polynomials(dim, k):
    space = FeSpace(build_structured(dim, 2), k)
    rng = np.random.default_rng(k)
    coef = rng.normal(size=dim)

    def poly(x):
        return (x @ coef) ** k + 1.0

    fn = nodal_interpolant(space, poly)
    rule = simplex_quadrature(dim, 2 * k)
    vals, _ = fn.cell_eval(rule.points)
    x = np.einsum("qi,cid->cqd", rule.points, space.mesh.cell_vertices)
    np.testing.assert_allclose(vals, poly(x), atol=1e-12)


def test_interpolant_of_test_problems():
    p2 = builtin_problem("poly2d")
    space = FeSpace(build_structured(2, 2), 1)
    fn = nodal_interpolant(space, p2.u)
    centre = int(np.flatnonzero(np.all(space.node_coords == 0.5, axis=1))[0])
    assert fn.coefficients[centre] == pytest.approx(1.0, abs=1e-15)
    assert np.all(fn.coefficients[space.boundary_nodes] == 0)
    p3 = builtin_problem("poly3d")
    assert p3.u(np.array([0.5, 0.5, 0.5])) == pytest.approx(1.0, abs=1e-15)


def test_physical_gradient_of_linear_interpolant():
    space = FeSpace(build_structured(3, 2), 2)
    g = np.array([0.3, -1.2, 2.0])
    fn = nodal_interpolant(space, lambda x: x @ g + 4.0)
    _, grads = fn.cell_eval(simplex_quadrature(3, 3).points)
    assert np.abs(grads - g).max() < 1e-10


@pytest.mark.parametrize("dim,k", [(2, 1), (2, 2), (3, 1), (3, 2)])
def test_patch_test(dim, k):
    space = FeSpace(build_structured(dim, 3 if dim == 2 else 2), k)
    g = np.linspace(0.5, 1.5, dim)

    def lin(x):
        return x @ g - 0.25

    exact = nodal_interpolant(space, lin)
    red = apply_dirichlet(assemble_stiffness(space), assemble_load(space, 0.0), space,
                          boundary_values=exact.coefficients)
    x = red.expand(cg_solve(red.matrix, red.rhs, 1e-13).solution)
    assert np.abs(x - exact.coefficients).max() < 1e-10


@pytest.mark.parametrize("dim,k", [(2, 2), (3, 1)])
def test_galerkin_residual_after_solve(dim, k):
    p = builtin_problem(f"poly{dim}d")
    space = FeSpace(build_structured(dim, 3), k)
    u_h = solve(space, p.f)
    mat = assemble_stiffness(space)
    rhs = assemble_load(space, p.f)
    res = (rhs - mat @ u_h.coefficients)[space.interior_dofs]
    assert np.abs(res).max() < 1e-10 * max(1.0, abs(mat).max())
    assert np.all(u_h.coefficients[space.boundary_nodes] == 0)
