"""Nested structured simplicial meshes of the unit square and unit cube.

Squares are cut along the (+1, +1) diagonal; cubes are cut into the six
Kuhn tetrahedra sharing the main diagonal.  Both patterns are nested under
uniform bisection of the cells-per-edge count, and every cell of a mesh is
congruent to one of 2 (2D) or 6 (3D) shape classes.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

__all__ = ["Mesh", "CellGeometry", "build_structured", "cell_geometry", "dump_mesh"]


def _readonly(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable structured triangulation of (0, 1)^dim.

    ``vertex_ids`` holds the integer lattice coordinates of the vertices
    (in units of ``h``); ``vertices`` are the same points as floats.
    """

    dim: int
    level: int
    vertex_ids: np.ndarray
    cells: np.ndarray

    @property
    def cells_per_edge(self) -> int:
        return 2 ** (self.level - 1)

    @property
    def h(self) -> float:
        return 1.0 / self.cells_per_edge

    @cached_property
    def vertices(self) -> np.ndarray:
        return _readonly(self.vertex_ids / self.cells_per_edge)

    @property
    def num_vertices(self) -> int:
        return len(self.vertex_ids)

    @property
    def num_cells(self) -> int:
        return len(self.cells)

    @cached_property
    def boundary_vertex_flags(self) -> np.ndarray:
        n = self.cells_per_edge
        return _readonly(np.any((self.vertex_ids == 0) | (self.vertex_ids == n), axis=1))

    @cached_property
    def cell_vertices(self) -> np.ndarray:
        """Vertex coordinates per cell, shape (ncells, dim+1, dim)."""
        return _readonly(self.vertices[self.cells])

    @cached_property
    def jacobians(self) -> np.ndarray:
        """Affine-map matrices from the reference simplex, columns v_i - v_0."""
        cv = self.cell_vertices
        return _readonly(np.transpose(cv[:, 1:, :] - cv[:, :1, :], (0, 2, 1)))

    @cached_property
    def jacobian_inv_T(self) -> np.ndarray:
        return _readonly(np.transpose(np.linalg.inv(self.jacobians), (0, 2, 1)))

    @cached_property
    def volumes(self) -> np.ndarray:
        return _readonly(np.abs(np.linalg.det(self.jacobians)) / math.factorial(self.dim))

    @cached_property
    def barycentric_gradients(self) -> np.ndarray:
        """Physical gradients of the barycentric coordinates, (ncells, dim+1, dim)."""
        d = self.dim
        ref = np.vstack([-np.ones((1, d)), np.eye(d)])
        return _readonly(np.einsum("cij,aj->cai", self.jacobian_inv_T, ref))

    @cached_property
    def facet_measures(self) -> np.ndarray:
        """Measure of the facet opposite each local vertex, (ncells, dim+1)."""
        g = np.linalg.norm(self.barycentric_gradients, axis=2)
        return _readonly(self.dim * self.volumes[:, None] * g)

    @cached_property
    def facet_normals(self) -> np.ndarray:
        """Outward unit normal of the facet opposite each local vertex."""
        g = self.barycentric_gradients
        return _readonly(-g / np.linalg.norm(g, axis=2, keepdims=True))

    @cached_property
    def facet_counts(self) -> tuple[np.ndarray, np.ndarray]:
        """Unique facets (sorted vertex tuples) and the number of cells sharing each."""
        d = self.dim
        facets = np.concatenate(
            [np.delete(self.cells, i, axis=1) for i in range(d + 1)], axis=0
        )
        facets.sort(axis=1)
        return np.unique(facets, axis=0, return_counts=True)

    def boundary_facet_flags(self, facets: np.ndarray) -> np.ndarray:
        ids = self.vertex_ids[facets]
        n = self.cells_per_edge
        on_low = np.all(ids == 0, axis=1)
        on_high = np.all(ids == n, axis=1)
        return np.any(on_low | on_high, axis=1)

    def vertex_index(self, ids) -> np.ndarray:
        """Lexicographic vertex number of integer lattice coordinates."""
        ids = np.asarray(ids)
        return np.ravel_multi_index(tuple(np.moveaxis(ids, -1, 0)), (self.cells_per_edge + 1,) * self.dim)


@dataclass(frozen=True)
class CellGeometry:
    vertex_coords: np.ndarray
    volume: float
    jacobian: np.ndarray
    jacobian_inv_T: np.ndarray
    normals: np.ndarray
    facet_measures: np.ndarray

    @property
    def dim(self) -> int:
        return self.jacobian.shape[0]

    @property
    def facets(self) -> list[dict]:
        """One entry per facet, indexed by the opposite local vertex."""
        return [
            {"normal": self.normals[i], "measure": float(self.facet_measures[i]), "opposite": i}
            for i in range(self.dim + 1)
        ]

    @classmethod
    def from_vertices(cls, vertex_coords) -> CellGeometry:
        """Geometry of a single simplex given its (dim+1) vertex coordinates."""
        v = np.asarray(vertex_coords, dtype=float)
        d = v.shape[1]
        if v.shape != (d + 1, d):
            raise ValueError(f"expected {d + 1} vertices in {d}D, got shape {v.shape}")
        jac = (v[1:] - v[0]).T
        det = np.linalg.det(jac)
        if abs(det) < 1e-300:
            raise ValueError("degenerate simplex")
        jit = np.linalg.inv(jac).T
        ref = np.vstack([-np.ones((1, d)), np.eye(d)])
        grads = ref @ jit.T
        gnorm = np.linalg.norm(grads, axis=1)
        vol = abs(det) / math.factorial(d)
        return cls(
            vertex_coords=v,
            volume=vol,
            jacobian=jac,
            jacobian_inv_T=jit,
            normals=-grads / gnorm[:, None],
            facet_measures=d * vol * gnorm,
        )


def _kuhn_cells(n: int) -> np.ndarray:
    corners = []
    for perm in itertools.permutations(range(3)):
        path = [np.zeros(3, dtype=int)]
        for axis in perm:
            step = path[-1].copy()
            step[axis] = 1
            path.append(step)
        # odd permutations come out negatively oriented
        sign = np.linalg.det(np.array(path[1:]) - path[0])
        if sign < 0:
            path[2], path[3] = path[3], path[2]
        corners.append(path)
    corners = np.array(corners)  # (6, 4, 3)
    origins = np.array(list(itertools.product(range(n), repeat=3)))
    ids = origins[:, None, None, :] + corners[None, :, :, :]
    return ids.reshape(-1, 4, 3)


def _diagonal_cells(n: int) -> np.ndarray:
    corners = np.array([[[0, 0], [1, 0], [1, 1]], [[0, 0], [1, 1], [0, 1]]])
    origins = np.array(list(itertools.product(range(n), repeat=2)))
    ids = origins[:, None, None, :] + corners[None, :, :, :]
    return ids.reshape(-1, 3, 2)


def build_structured(dim: int, level: int) -> Mesh:
    """Level-``level`` mesh of the unit square (dim=2) or cube (dim=3).

    ``h = 2**(1 - level)``; level 1 is a single square/cube.
    """
    if dim not in (2, 3):
        raise ValueError(f"dim must be 2 or 3, got {dim!r}")
    if int(level) != level or level < 1:
        raise ValueError(f"level must be a positive integer, got {level!r}")
    n = 2 ** (level - 1)
    vertex_ids = np.array(list(itertools.product(range(n + 1), repeat=dim)), dtype=np.int64)
    cell_ids = _diagonal_cells(n) if dim == 2 else _kuhn_cells(n)
    cells = np.ravel_multi_index(tuple(np.moveaxis(cell_ids, -1, 0)), (n + 1,) * dim)
    return Mesh(dim=dim, level=level, vertex_ids=_readonly(vertex_ids), cells=_readonly(cells.astype(np.int64)))


def cell_geometry(mesh: Mesh, cell_index: int) -> CellGeometry:
    if not 0 <= cell_index < mesh.num_cells:
        raise IndexError(f"cell index {cell_index} out of range [0, {mesh.num_cells})")
    return CellGeometry(
        vertex_coords=mesh.cell_vertices[cell_index],
        volume=float(mesh.volumes[cell_index]),
        jacobian=mesh.jacobians[cell_index],
        jacobian_inv_T=mesh.jacobian_inv_T[cell_index],
        normals=mesh.facet_normals[cell_index],
        facet_measures=mesh.facet_measures[cell_index],
    )


def dump_mesh(mesh: Mesh, path) -> None:
    """Write vertices then cells (0-based) as plain CSV sections."""
    path = Path(path)
    coord_names = ["x", "y", "z"][: mesh.dim]
    with path.open("w") as fh:
        fh.write(f"# vertices {mesh.num_vertices}\n")
        fh.write("index," + ",".join(coord_names) + "\n")
        for i, v in enumerate(mesh.vertices):
            fh.write(f"{i}," + ",".join(repr(float(c)) for c in v) + "\n")
        fh.write(f"# cells {mesh.num_cells}\n")
        fh.write("index," + ",".join(f"v{j}" for j in range(mesh.dim + 1)) + "\n")
        for i, c in enumerate(mesh.cells):
            fh.write(f"{i}," + ",".join(str(int(j)) for j in c) + "\n")
