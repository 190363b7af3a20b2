"""Global P_k Lagrange spaces, stiffness/load assembly and Dirichlet elimination."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .element import eval_basis, lagrange_basis, simplex_quadrature
from .mesh import Mesh

__all__ = [
    "FeSpace",
    "FeFunction",
    "as_field",
    "cell_chunks",
    "interior_quadrature_degree",
    "facet_quadrature_degree",
    "assemble_stiffness",
    "assemble_load",
    "assemble_action",
    "apply_dirichlet",
    "nodal_interpolant",
    "physical_points",
]

# Upper bound on floats held by one per-chunk work array.
_CHUNK_FLOATS = 4_000_000


def interior_quadrature_degree(k: int) -> int:
    return 2 * k + 4


def facet_quadrature_degree(k: int) -> int:
    return 2 * k + 2


def cell_chunks(ncells: int, per_cell: int):
    step = max(1, _CHUNK_FLOATS // max(per_cell, 1))
    for start in range(0, ncells, step):
        yield slice(start, min(start + step, ncells))


def as_field(value):
    """Wrap a constant as a field; callables pass through.

    Fields take an array of points of shape (..., dim) and return an
    array of shape (...).
    """
    if callable(value):
        return value
    c = float(value)

    def constant(x):
        return np.full(np.shape(x)[:-1], c)

    constant.constant = c
    return constant


def physical_points(mesh: Mesh, bary: np.ndarray, cells=slice(None)) -> np.ndarray:
    return np.matmul(bary, mesh.cell_vertices[cells])


@dataclass(frozen=True, eq=False)
class FeSpace:
    """Continuous degree-k Lagrange space on a structured mesh.

    Global nodes are the points of the uniform lattice with spacing
    ``h/k``, numbered lexicographically; a local node with lattice
    multi-index ``a`` in a cell with integer vertex coordinates ``v_i``
    sits at lattice point ``sum_i a_i v_i``.
    """

    mesh: Mesh
    degree: int

    def __post_init__(self):
        lagrange_basis(self.dim, self.degree)  # validates the degree

    @property
    def dim(self) -> int:
        return self.mesh.dim

    @cached_property
    def basis(self):
        return lagrange_basis(self.dim, self.degree)

    @property
    def lattice_size(self) -> int:
        return self.mesh.cells_per_edge * self.degree

    @property
    def dof_total(self) -> int:
        return (self.lattice_size + 1) ** self.dim

    @cached_property
    def cell_dofs(self) -> np.ndarray:
        """Local-to-global node map, shape (ncells, nbasis)."""
        vid = self.mesh.vertex_ids[self.mesh.cells]  # (nc, d+1, d)
        lattice = np.einsum("bi,cid->cbd", self.basis.multi_indices, vid)
        dofs = np.ravel_multi_index(
            tuple(np.moveaxis(lattice, -1, 0)), (self.lattice_size + 1,) * self.dim
        )
        dofs.setflags(write=False)
        return dofs

    @cached_property
    def node_ids(self) -> np.ndarray:
        ids = np.indices((self.lattice_size + 1,) * self.dim).reshape(self.dim, -1).T
        ids.setflags(write=False)
        return ids

    @cached_property
    def node_coords(self) -> np.ndarray:
        return self.node_ids / self.lattice_size

    @cached_property
    def boundary_nodes(self) -> np.ndarray:
        ids = self.node_ids
        flags = np.any((ids == 0) | (ids == self.lattice_size), axis=1)
        flags.setflags(write=False)
        return flags

    @property
    def interior_dofs(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_nodes)

    @property
    def dof_interior(self) -> int:
        return int((~self.boundary_nodes).sum())

    def function(self, coefficients=None) -> FeFunction:
        if coefficients is None:
            coefficients = np.zeros(self.dof_total)
        return FeFunction(self, np.asarray(coefficients, dtype=float))


@dataclass(frozen=True, eq=False)
class FeFunction:
    space: FeSpace
    coefficients: np.ndarray

    def __post_init__(self):
        if self.coefficients.shape != (self.space.dof_total,):
            raise ValueError(
                f"expected {self.space.dof_total} coefficients, got {self.coefficients.shape}"
            )

    @property
    def polynomial_degree(self) -> int:
        return self.space.degree

    def cell_eval(self, bary, cells=slice(None)):
        """Values (nc, nq) and physical gradients (nc, nq, dim) at barycentric points."""
        phi, dphi = eval_basis(self.space.basis, bary)
        local = self.coefficients[self.space.cell_dofs[cells]]  # (nc, nb)
        vals = local @ phi.T
        nq, nb, d = dphi.shape
        ref_grad = (local @ dphi.transpose(1, 0, 2).reshape(nb, nq * d)).reshape(-1, nq, d)
        jit = self.space.mesh.jacobian_inv_T[cells]
        return vals, np.matmul(ref_grad, jit.transpose(0, 2, 1))


def _physical_gradients(jit: np.ndarray, dphi: np.ndarray) -> np.ndarray:
    """grad phi_b at each point of each cell: (c, i, j) x (q, b, j) -> (c, q, b, i)."""
    return np.matmul(dphi[None], jit.transpose(0, 2, 1)[:, None])


def _basis_tables(space: FeSpace, degree: int):
    rule = simplex_quadrature(space.dim, degree)
    phi, dphi = eval_basis(space.basis, rule.points)
    return rule, phi, dphi


def _field_at(field, mesh: Mesh, bary, cells):
    return np.asarray(field(physical_points(mesh, bary, cells)), dtype=float)


def assemble_stiffness(space: FeSpace, alpha=1.0, quad_degree: int | None = None) -> sp.csr_matrix:
    """Global matrix with entries a(phi_j, phi_i) = int alpha grad phi_j . grad phi_i.

    Raises
    ------
    ValueError
        If ``alpha`` is not strictly positive at some quadrature point.
    """
    alpha = as_field(alpha)
    mesh = space.mesh
    if quad_degree is None:
        quad_degree = interior_quadrature_degree(space.degree)
    rule, _, dphi = _basis_tables(space, quad_degree)
    nq, nb, d = dphi.shape
    rows, cols, vals = [], [], []
    for chunk in cell_chunks(mesh.num_cells, nq * nb * d * 2):
        a = _field_at(alpha, mesh, rule.points, chunk)
        if np.any(a <= 0):
            raise ValueError("coefficient alpha must be positive at every quadrature point")
        g = _physical_gradients(mesh.jacobian_inv_T[chunk], dphi)  # (c, q, b, i)
        wq = a * rule.weights[None, :] * (mesh.volumes[chunk] * math.factorial(d))[:, None]
        nc = g.shape[0]
        left = (g * wq[:, :, None, None]).transpose(0, 2, 1, 3).reshape(nc, nb, nq * d)
        right = g.transpose(0, 1, 3, 2).reshape(nc, nq * d, nb)
        ke = np.matmul(left, right)
        ke = 0.5 * (ke + np.transpose(ke, (0, 2, 1)))
        dofs = space.cell_dofs[chunk]
        rows.append(np.repeat(dofs, nb, axis=1).ravel())
        cols.append(np.tile(dofs, (1, nb)).ravel())
        vals.append(ke.ravel())
    n = space.dof_total
    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    return mat.tocsr()


def assemble_load(space: FeSpace, f, quad_degree: int | None = None) -> np.ndarray:
    """Vector of (f, phi_i)."""
    f = as_field(f)
    mesh = space.mesh
    if quad_degree is None:
        quad_degree = interior_quadrature_degree(space.degree)
    rule, phi, _ = _basis_tables(space, quad_degree)
    out = np.zeros(space.dof_total)
    d = space.dim
    for chunk in cell_chunks(mesh.num_cells, len(rule) * 8):
        fv = _field_at(f, mesh, rule.points, chunk)
        wq = fv * rule.weights[None, :] * (mesh.volumes[chunk] * math.factorial(d))[:, None]
        np.add.at(out, space.cell_dofs[chunk], wq @ phi)
    return out


def assemble_action(space: FeSpace, fn, alpha=1.0, quad_degree: int | None = None) -> np.ndarray:
    """Vector of a(fn, phi_i) for any evaluator exposing ``cell_eval``."""
    alpha = as_field(alpha)
    mesh = space.mesh
    if quad_degree is None:
        quad_degree = interior_quadrature_degree(max(space.degree, fn.polynomial_degree))
    rule, _, dphi = _basis_tables(space, quad_degree)
    nq, nb, d = dphi.shape
    out = np.zeros(space.dof_total)
    for chunk in cell_chunks(mesh.num_cells, nq * nb * d * 2):
        a = _field_at(alpha, mesh, rule.points, chunk)
        _, gfn = fn.cell_eval(rule.points, chunk)
        g = _physical_gradients(mesh.jacobian_inv_T[chunk], dphi)
        wq = a * rule.weights[None, :] * (mesh.volumes[chunk] * math.factorial(d))[:, None]
        contrib = np.matmul(g, (gfn * wq[:, :, None])[:, :, :, None])[..., 0].sum(axis=1)
        np.add.at(out, space.cell_dofs[chunk], contrib)
    return out


@dataclass(frozen=True)
class ReducedSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    free: np.ndarray  # global indices of the retained unknowns
    boundary_values: np.ndarray  # full-length vector, zero on free nodes

    def expand(self, x) -> np.ndarray:
        """Scatter a reduced solution back to all global nodes."""
        full = self.boundary_values.copy()
        full[self.free] = x
        return full

    # tuple-style unpacking: matrix, rhs, index map
    def __iter__(self):
        return iter((self.matrix, self.rhs, self.free))


def apply_dirichlet(matrix, rhs, space: FeSpace, boundary_values=None) -> ReducedSystem:
    """Eliminate boundary rows and columns.

    ``boundary_values`` (full-length, only boundary entries used) defaults
    to zero, the homogeneous case.
    """
    free = space.interior_dofs
    bnd = np.flatnonzero(space.boundary_nodes)
    g = np.zeros(space.dof_total)
    matrix = sp.csr_matrix(matrix)
    reduced_rhs = np.asarray(rhs, dtype=float)[free].copy()
    if boundary_values is not None:
        g[bnd] = np.asarray(boundary_values, dtype=float)[bnd]
        reduced_rhs -= matrix[free][:, bnd] @ g[bnd]
    reduced = matrix[free][:, free].tocsr()
    return ReducedSystem(matrix=reduced, rhs=reduced_rhs, free=free, boundary_values=g)


def nodal_interpolant(space: FeSpace, u) -> FeFunction:
    u = as_field(u)
    return FeFunction(space, np.asarray(u(space.node_coords), dtype=float))
