"""Bubble functions and the flux-conserving correction of a finite element solution.

A corrected solution adds one bubble per cell, scaled so that

    int_tau f + int_{boundary of tau} alpha d(u_h + gamma_tau b_tau)/dn = 0

on every cell.  Bubbles vanish on cell boundaries, so the correction leaves
the trace of u_h (and its values at all non-interior nodes) untouched.

Two bubble families are available:

* ``standard`` -- ``(d+1)**(d+1) * prod(lambda_i)``, any dimension;
* ``orthogonal(k)`` -- degree-k bubbles on triangles whose gradients are
  L2-orthogonal to gradients of degree-(k-2) polynomials, so a P_{k-2}
  solution corrected with them still satisfies its Galerkin equations
  when alpha is constant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .assembly import (
    FeFunction,
    FeSpace,
    as_field,
    assemble_action,
    assemble_load,
    cell_chunks,
    facet_quadrature_degree,
    interior_quadrature_degree,
)
from .element import check_barycentric, facet_points, simplex_quadrature
from .flux import boundary_flux, flux_residuals
from .mesh import CellGeometry, Mesh

__all__ = [
    "BubbleKind",
    "STANDARD",
    "orthogonal",
    "BubbleField",
    "CorrectedSolution",
    "DegenerateBubbleError",
    "OrthogonalityError",
    "OrthogonalityReport",
    "bubble_eval",
    "bubble_boundary_flux",
    "bubble_boundary_fluxes",
    "bubble_cell_norms",
    "compute_gammas",
    "build_corrected",
    "verify_orthogonality",
    "verify_galerkin_preservation",
]

# Coefficients {(i, j): c} of the polynomial factor p(x, y) multiplying the
# cubic bubble on the reference triangle, x = lambda_1, y = lambda_2.
_ORTHOGONAL_FACTORS = {
    3: {(0, 0): 1},
    4: {(1, 0): 3, (0, 1): 3, (0, 0): -2},
    5: {(2, 0): 1, (1, 1): -3, (0, 2): 1},
    6: {
        (2, 0): 2, (1, 1): -6, (0, 2): 2,
        (3, 0): 1, (2, 1): -16, (1, 2): 26, (0, 3): -6,
    },
    7: {(4, 0): 1, (3, 1): -10, (2, 2): 20, (1, 3): -10, (0, 4): 1},
    8: {
        (4, 0): 3, (3, 1): -30, (2, 2): 60, (1, 3): -30, (0, 4): 3,
        (5, 0): 3, (4, 1): -66, (3, 2): 290, (2, 3): -360, (1, 4): 129, (0, 5): -10,
    },
}


class DegenerateBubbleError(ArithmeticError):
    pass


class OrthogonalityError(AssertionError):
    pass


@dataclass(frozen=True)
class BubbleKind:
    tag: str = "standard"
    order: int | None = None

    def __post_init__(self):
        if self.tag == "standard":
            if self.order is not None:
                raise ValueError("standard bubbles take no order")
        elif self.tag == "orthogonal":
            if self.order not in _ORTHOGONAL_FACTORS:
                raise ValueError(f"orthogonal bubble order must be in 3..8, got {self.order!r}")
        else:
            raise ValueError(f"unknown bubble kind {self.tag!r}")

    def degree(self, dim: int) -> int:
        return dim + 1 if self.tag == "standard" else self.order

    def check_dim(self, dim: int) -> None:
        if self.tag == "orthogonal" and dim != 2:
            raise ValueError("orthogonal bubbles are only defined on triangles")

    def __str__(self) -> str:
        return self.tag if self.order is None else f"{self.tag}({self.order})"


STANDARD = BubbleKind()


def orthogonal(order: int) -> BubbleKind:
    return BubbleKind("orthogonal", order)


def _standard(lam: np.ndarray):
    d = lam.shape[1] - 1
    c = float((d + 1) ** (d + 1))
    val = c * np.prod(lam, axis=1)
    dlam = np.stack(
        [c * np.prod(np.delete(lam, i, axis=1), axis=1) for i in range(d + 1)], axis=1
    )
    return val, dlam[:, 1:] - dlam[:, :1]


def _poly2(coeffs: dict, x, y):
    p = np.zeros_like(x)
    px = np.zeros_like(x)
    py = np.zeros_like(x)
    for (i, j), c in coeffs.items():
        p += c * x**i * y**j
        if i:
            px += c * i * x ** (i - 1) * y**j
        if j:
            py += c * j * x**i * y ** (j - 1)
    return p, np.stack([px, py], axis=1)


def bubble_eval(kind: BubbleKind, dim: int, points):
    """Bubble value and reference-coordinate gradient at barycentric points.

    Returns arrays of shape (npts,) and (npts, dim).
    """
    kind.check_dim(dim)
    lam = check_barycentric(points, dim)
    val, grad = _standard(lam)
    if kind.tag == "orthogonal":
        p, dp = _poly2(_ORTHOGONAL_FACTORS[kind.order], lam[:, 1], lam[:, 2])
        grad = dp * val[:, None] + p[:, None] * grad
        val = p * val
    return val, grad


@dataclass(frozen=True, eq=False)
class BubbleField:
    """The piecewise function sum_tau gamma_tau b_tau."""

    mesh: Mesh
    kind: BubbleKind
    gammas: np.ndarray

    def __post_init__(self):
        self.kind.check_dim(self.mesh.dim)
        if np.shape(self.gammas) != (self.mesh.num_cells,):
            raise ValueError(
                f"expected {self.mesh.num_cells} bubble coefficients, got {np.shape(self.gammas)}"
            )

    @property
    def polynomial_degree(self) -> int:
        return self.kind.degree(self.mesh.dim)

    def cell_eval(self, bary, cells=slice(None)):
        b, db = bubble_eval(self.kind, self.mesh.dim, bary)
        g = np.asarray(self.gammas)[cells]
        grads = np.matmul(db, self.mesh.jacobian_inv_T[cells].transpose(0, 2, 1))
        return g[:, None] * b[None, :], g[:, None, None] * grads


@dataclass(frozen=True, eq=False)
class CorrectedSolution:
    base: FeFunction
    gammas: np.ndarray
    kind: BubbleKind

    @property
    def space(self) -> FeSpace:
        return self.base.space

    @property
    def bubbles(self) -> BubbleField:
        return BubbleField(self.space.mesh, self.kind, self.gammas)

    @property
    def polynomial_degree(self) -> int:
        return max(self.base.polynomial_degree, self.kind.degree(self.space.dim))

    def cell_eval(self, bary, cells=slice(None)):
        v, g = self.base.cell_eval(bary, cells)
        bv, bg = self.bubbles.cell_eval(bary, cells)
        return v + bv, g + bg


def _flux_scale(volume: float, dim: int) -> float:
    return volume ** ((dim - 2) / dim)


def bubble_boundary_flux(cell: CellGeometry, alpha, kind: BubbleKind, facet_degree: int | None = None) -> float:
    """int_{boundary of cell} alpha db/dn for a single cell.

    Raises DegenerateBubbleError if the result is numerically zero.
    """
    alpha = as_field(alpha)
    d = cell.dim
    if facet_degree is None:
        facet_degree = facet_quadrature_degree(kind.degree(d))
    pts, w = facet_points(d, facet_degree)
    total = 0.0
    for i in range(d + 1):
        _, db = bubble_eval(kind, d, pts[i])
        grads = db @ cell.jacobian_inv_T.T
        x = pts[i] @ cell.vertex_coords
        total += cell.facet_measures[i] * np.sum(w * alpha(x) * (grads @ cell.normals[i]))
    amax = float(np.max(np.abs(alpha(np.asarray(cell.vertex_coords)))))
    if abs(total) <= 1e-14 * amax * _flux_scale(cell.volume, d):
        raise DegenerateBubbleError(f"bubble boundary flux vanishes ({total:.3e})")
    return float(total)


def bubble_boundary_fluxes(mesh: Mesh, alpha, kind: BubbleKind, facet_degree: int) -> np.ndarray:
    """Vectorized bubble_boundary_flux over all cells."""
    unit = BubbleField(mesh, kind, np.ones(mesh.num_cells))
    out = boundary_flux(mesh, unit, alpha, facet_degree)
    scale = _flux_scale(mesh.volumes, mesh.dim)
    bad = np.abs(out) < 1e-14 * scale
    if np.any(bad):
        raise DegenerateBubbleError(
            f"bubble boundary flux vanishes on {int(bad.sum())} cell(s), first {int(np.argmax(bad))}"
        )
    return out


def bubble_cell_norms(mesh: Mesh, kind: BubbleKind, alpha=1.0):
    """Per-cell |int db/dn|, |b|_{H1(tau)} and ||b||_{L2(tau)}."""
    deg = kind.degree(mesh.dim)
    flux = np.abs(bubble_boundary_fluxes(mesh, alpha, kind, facet_quadrature_degree(deg)))
    rule = simplex_quadrature(mesh.dim, 2 * deg)
    unit = BubbleField(mesh, kind, np.ones(mesh.num_cells))
    h1 = np.zeros(mesh.num_cells)
    l2 = np.zeros(mesh.num_cells)
    jac = mesh.volumes * math.factorial(mesh.dim)
    for chunk in cell_chunks(mesh.num_cells, len(rule) * (mesh.dim + 1) * 3):
        v, g = unit.cell_eval(rule.points, chunk)
        l2[chunk] = np.sqrt((v**2 @ rule.weights) * jac[chunk])
        h1[chunk] = np.sqrt((np.sum(g**2, axis=2) @ rule.weights) * jac[chunk])
    return flux, h1, l2


def compute_gammas(space: FeSpace, u_h: FeFunction, alpha, f, kind: BubbleKind) -> np.ndarray:
    """Bubble coefficients gamma_tau = -F_tau(u_h) / int alpha db_tau/dn.

    Quadrature degrees match the ones used to evaluate the corrected
    solution's flux residuals, so the correction cancels to round-off.
    """
    kind.check_dim(space.dim)
    k = max(space.degree, kind.degree(space.dim))
    residual = flux_residuals(space, _DegreeView(u_h, k), alpha, f)
    denom = bubble_boundary_fluxes(space.mesh, alpha, kind, facet_quadrature_degree(k))
    return -residual / denom


@dataclass(frozen=True)
class _DegreeView:
    """Evaluator proxy reporting a raised polynomial degree (for quadrature choice)."""

    fn: object
    polynomial_degree: int

    def cell_eval(self, bary, cells=slice(None)):
        return self.fn.cell_eval(bary, cells)


def build_corrected(u_h: FeFunction, gammas, kind: BubbleKind) -> CorrectedSolution:
    g = np.asarray(gammas, dtype=float)
    n = u_h.space.mesh.num_cells
    if g.shape != (n,):
        raise ValueError(f"expected {n} gammas, got shape {g.shape}")
    kind.check_dim(u_h.space.dim)
    return CorrectedSolution(base=u_h, gammas=g, kind=kind)


@dataclass
class OrthogonalityReport:
    order: int
    boundary_max: float
    moment_max: float
    laplacian_integral: float
    h1_max: float


def _monomials(deg: int):
    return [(i, j) for i in range(deg + 1) for j in range(deg + 1 - i)] if deg >= 0 else []


def verify_orthogonality(k: int, tol: float = 1e-12) -> OrthogonalityReport:
    """Check the defining constraints of the degree-k orthogonal bubble.

    (a) it vanishes on the reference-triangle boundary;
    (b) int b q = 0 for monomials q of degree <= k-4;
    (c) int Laplacian(b) != 0;
    (d) int grad b . grad v = 0 for monomials v of degree <= k-2.

    Raises OrthogonalityError naming the first violated constraint.
    """
    kind = orthogonal(k)
    name = f"orthogonal({k}) bubble"
    fpts, fw = facet_points(2, 2 * k)
    edge = np.concatenate(list(fpts))
    vertices = np.eye(3)
    bvals, _ = bubble_eval(kind, 2, np.concatenate([edge, vertices]))
    boundary_max = float(np.max(np.abs(bvals)))
    if boundary_max > tol:
        raise OrthogonalityError(f"{name}: (a) nonzero boundary value {boundary_max:.3e}")

    rule = simplex_quadrature(2, 2 * k)
    b, db = bubble_eval(kind, 2, rule.points)
    x, y = rule.points[:, 1], rule.points[:, 2]
    moments = [abs(np.sum(rule.weights * b * x**i * y**j)) for i, j in _monomials(k - 4)]
    moment_max = max(moments, default=0.0)
    if moment_max > tol:
        raise OrthogonalityError(f"{name}: (b) moment against P_{k - 4} is {moment_max:.3e}")

    geom = CellGeometry.from_vertices([[0, 0], [1, 0], [0, 1]])
    lap = bubble_boundary_flux(geom, 1.0, kind, facet_degree=2 * k)
    if abs(lap) <= tol:
        raise OrthogonalityError(f"{name}: (c) zero Laplacian integral")

    h1 = []
    for i, j in _monomials(k - 2):
        vx = i * x ** max(i - 1, 0) * y**j if i else np.zeros_like(x)
        vy = j * x**i * y ** max(j - 1, 0) if j else np.zeros_like(x)
        h1.append(abs(np.sum(rule.weights * (db[:, 0] * vx + db[:, 1] * vy))))
    h1_max = max(h1, default=0.0)
    if h1_max > tol:
        raise OrthogonalityError(f"{name}: (d) H1 product against P_{k - 2} is {h1_max:.3e}")
    return OrthogonalityReport(k, boundary_max, moment_max, lap, h1_max)


def verify_galerkin_preservation(space: FeSpace, u_h: FeFunction, corrected, f, alpha=1.0) -> float:
    """Max over interior basis functions of |a(u~_h, phi_i) - (f, phi_i)|."""
    if corrected.base is not u_h:
        raise ValueError("corrected solution was not built from u_h")
    action = assemble_action(space, corrected, alpha)
    load = assemble_load(space, f, interior_quadrature_degree(space.degree))
    res = (action - load)[space.interior_dofs]
    return float(np.max(np.abs(res))) if res.size else 0.0
