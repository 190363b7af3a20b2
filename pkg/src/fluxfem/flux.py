"""Elementwise flux residuals and their aggregate norms."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .assembly import (
    FeSpace,
    as_field,
    cell_chunks,
    facet_quadrature_degree,
    interior_quadrature_degree,
    physical_points,
)
from .element import facet_points, simplex_quadrature
from .mesh import Mesh

__all__ = [
    "FluxReport",
    "boundary_flux",
    "cell_source",
    "flux_residuals",
    "element_flux_residual",
    "flux_norms",
    "flux_field_export",
    "observed_order",
]


def observed_order(coarse: float, fine: float) -> float:
    """log2 of the error ratio between two consecutive levels."""
    if coarse <= 0 or fine <= 0:
        return float("nan")
    return math.log2(coarse / fine)


def _degrees(space: FeSpace, fn=None):
    k = space.degree
    if fn is not None:
        k = max(k, fn.polynomial_degree)
    return interior_quadrature_degree(k), facet_quadrature_degree(k)


def boundary_flux(mesh: Mesh, fn, alpha, facet_degree: int, cells=slice(None)) -> np.ndarray:
    """Per-cell sum over facets of int alpha grad(fn).n, taken from inside the cell."""
    alpha = as_field(alpha)
    d = mesh.dim
    pts, w = facet_points(d, facet_degree)
    idx = np.arange(mesh.num_cells)[cells]
    out = np.zeros(len(idx))
    for chunk in cell_chunks(len(idx), len(w) * (d + 1) * d * 4):
        sel = idx[chunk]
        total = np.zeros(len(sel))
        for i in range(d + 1):
            _, grads = fn.cell_eval(pts[i], sel)
            a = alpha(physical_points(mesh, pts[i], sel))
            normal = mesh.facet_normals[sel, i]
            dn = np.matmul(grads, normal[:, :, None])[..., 0]
            total += mesh.facet_measures[sel, i] * ((a * dn) @ w)
        out[chunk] = total
    return out


def cell_source(mesh: Mesh, f, degree: int, cells=slice(None)) -> np.ndarray:
    """Per-cell int_tau f."""
    f = as_field(f)
    rule = simplex_quadrature(mesh.dim, degree)
    idx = np.arange(mesh.num_cells)[cells]
    out = np.zeros(len(idx))
    scale = math.factorial(mesh.dim)
    for chunk in cell_chunks(len(idx), len(rule) * mesh.dim * 2):
        sel = idx[chunk]
        fv = f(physical_points(mesh, rule.points, sel))
        out[chunk] = (fv @ rule.weights) * mesh.volumes[sel] * scale
    return out


def flux_residuals(space: FeSpace, fn, alpha, f, cells=slice(None)) -> np.ndarray:
    """F_tau = int_tau f + int_{boundary of tau} alpha d(fn)/dn for every cell.

    ``fn`` is any evaluator with ``cell_eval`` and ``polynomial_degree``
    (an FeFunction or a corrected solution).
    """
    qi, qf = _degrees(space, fn)
    return cell_source(space.mesh, f, qi, cells) + boundary_flux(space.mesh, fn, alpha, qf, cells)


def element_flux_residual(space: FeSpace, fn, alpha, f, cell_index: int) -> float:
    if not 0 <= cell_index < space.mesh.num_cells:
        raise IndexError(f"cell index {cell_index} out of range")
    sel = slice(cell_index, cell_index + 1)
    return float(flux_residuals(space, fn, alpha, f, sel)[0])


@dataclass
class FluxReport:
    residuals: np.ndarray = field(repr=False)
    l1: float
    l2: float
    linf: float


def flux_norms(residuals) -> FluxReport:
    r = np.asarray(residuals, dtype=float)
    if r.size == 0:
        raise ValueError("no residuals given")
    a = np.abs(r)
    return FluxReport(residuals=r, l1=float(a.sum()), l2=float(np.sqrt(r @ r)), linf=float(a.max()))


def _write_csv(report: FluxReport, mesh: Mesh, path: Path) -> None:
    centroids = mesh.cell_vertices.mean(axis=1)
    names = ["x", "y", "z"][: mesh.dim]
    with path.open("w") as fh:
        fh.write("cell," + ",".join(f"centroid_{c}" for c in names) + ",abs_flux\n")
        for i, (c, v) in enumerate(zip(centroids, np.abs(report.residuals))):
            fh.write(f"{i}," + ",".join(f"{t:.17g}" for t in c) + f",{v:.17g}\n")


def _write_vtk(report: FluxReport, mesh: Mesh, path: Path) -> None:
    nv, nc, d = mesh.num_vertices, mesh.num_cells, mesh.dim
    cell_type = 5 if d == 2 else 10  # VTK_TRIANGLE / VTK_TETRA
    pts = np.zeros((nv, 3))
    pts[:, :d] = mesh.vertices
    with path.open("w") as fh:
        fh.write("# vtk DataFile Version 3.0\nelementwise flux error\nASCII\n")
        fh.write("DATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {nv} double\n")
        for p in pts:
            fh.write(f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")
        fh.write(f"CELLS {nc} {nc * (d + 2)}\n")
        for c in mesh.cells:
            fh.write(f"{d + 1} " + " ".join(str(int(v)) for v in c) + "\n")
        fh.write(f"CELL_TYPES {nc}\n")
        fh.write(f"{cell_type}\n" * nc)
        fh.write(f"CELL_DATA {nc}\nSCALARS abs_flux double 1\nLOOKUP_TABLE default\n")
        for v in np.abs(report.residuals):
            fh.write(f"{v:.17g}\n")


def flux_field_export(report: FluxReport, mesh: Mesh, path, fmt: str | None = None) -> Path:
    """Write |F_tau| as a piecewise-constant cell field.

    ``fmt`` is ``"csv"`` or ``"vtk"``; by default it follows the file
    suffix, falling back to CSV.
    """
    path = Path(path)
    if len(report.residuals) != mesh.num_cells:
        raise ValueError("report and mesh have different cell counts")
    if fmt is None:
        fmt = "vtk" if path.suffix.lower() == ".vtk" else "csv"
    if fmt == "csv":
        _write_csv(report, mesh, path)
    elif fmt == "vtk":
        _write_vtk(report, mesh, path)
    else:
        raise ValueError(f"unknown field format {fmt!r}")
    return path
