"""Lagrange bases on the reference simplex and simplex quadrature.

The reference simplex has vertices 0, e_1, ..., e_d.  Barycentric
coordinates are ordered ``(1 - sum(x), x_1, ..., x_d)`` so that local
vertex ``i`` of a cell maps to reference vertex ``i``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

__all__ = [
    "MAX_DEGREE",
    "MAX_QUADRATURE_DEGREE",
    "QuadratureRule",
    "ReferenceBasis",
    "lagrange_basis",
    "eval_basis",
    "simplex_quadrature",
    "facet_quadrature",
    "facet_points",
    "barycentric_to_cartesian",
    "check_barycentric",
]

MAX_DEGREE = {2: 8, 3: 5}
MAX_QUADRATURE_DEGREE = 30


def check_barycentric(points, dim: int, tol: float = 1e-12) -> np.ndarray:
    """Return ``points`` as a 2-D array, raising on malformed input."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.ndim != 2 or pts.shape[1] != dim + 1:
        raise ValueError(f"barycentric points in {dim}D need {dim + 1} components")
    if np.any(pts < -tol):
        raise ValueError("barycentric components must be nonnegative")
    if np.any(np.abs(pts.sum(axis=1) - 1.0) > tol):
        raise ValueError("barycentric components must sum to 1")
    return pts


def barycentric_to_cartesian(bary: np.ndarray) -> np.ndarray:
    return np.asarray(bary)[..., 1:]


@dataclass(frozen=True, eq=False)
class ReferenceBasis:
    dim: int
    degree: int
    multi_indices: np.ndarray  # (nb, dim+1) integer lattice indices summing to degree

    @property
    def nodes(self) -> np.ndarray:
        return self.multi_indices / self.degree

    @property
    def basis_count(self) -> int:
        return len(self.multi_indices)

    def on_facet(self, facet: int) -> np.ndarray:
        """Boolean mask of the nodes lying on the facet opposite ``facet``."""
        return self.multi_indices[:, facet] == 0

    @property
    def boundary_node_mask(self) -> np.ndarray:
        return np.any(self.multi_indices == 0, axis=1)


@lru_cache(maxsize=None)
def lagrange_basis(dim: int, degree: int) -> ReferenceBasis:
    if dim not in MAX_DEGREE:
        raise ValueError(f"unsupported dimension {dim!r}")
    if not 1 <= degree <= MAX_DEGREE[dim]:
        raise ValueError(f"degree must be in 1..{MAX_DEGREE[dim]} for {dim}D, got {degree!r}")
    idx = [
        a for a in itertools.product(range(degree + 1), repeat=dim + 1) if sum(a) == degree
    ]
    idx.sort(key=lambda a: tuple(-t for t in a))
    arr = np.array(idx, dtype=np.int64)
    arr.setflags(write=False)
    return ReferenceBasis(dim=dim, degree=degree, multi_indices=arr)


def _lattice_factors(lam: np.ndarray, k: int):
    """P_m(s) = prod_{j<m} (k s - j)/(j+1) and its derivative, m = 0..k."""
    shape = (k + 1,) + lam.shape
    P = np.empty(shape)
    dP = np.empty(shape)
    P[0] = 1.0
    dP[0] = 0.0
    for m in range(1, k + 1):
        fac = (k * lam - (m - 1)) / m
        P[m] = P[m - 1] * fac
        dP[m] = dP[m - 1] * fac + P[m - 1] * (k / m)
    return P, dP


def eval_basis(basis: ReferenceBasis, points):
    """Values and reference-coordinate gradients of every basis function.

    Parameters
    ----------
    basis : ReferenceBasis
    points : array_like
        One barycentric point of length dim+1, or an array of them.

    Returns
    -------
    values : ndarray, shape (npts, nbasis)
    gradients : ndarray, shape (npts, nbasis, dim)
    """
    lam = check_barycentric(points, basis.dim)
    d, k = basis.dim, basis.degree
    P, dP = _lattice_factors(lam, k)  # (k+1, npts, d+1)
    mi = basis.multi_indices
    cols = np.arange(d + 1)
    # factors[q, b, i] = P_{mi[b, i]}(lam[q, i])
    factors = np.transpose(P[mi, :, cols], (2, 0, 1))
    dfactors = np.transpose(dP[mi, :, cols], (2, 0, 1))
    values = np.prod(factors, axis=2)
    dlam = np.empty_like(factors)
    for i in range(d + 1):
        others = np.prod(np.delete(factors, i, axis=2), axis=2)
        dlam[:, :, i] = dfactors[:, :, i] * others
    grads = dlam[:, :, 1:] - dlam[:, :, :1]
    return values, grads


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Barycentric points and weights on the reference ``dim``-simplex.

    Weights sum to the reference measure ``1/dim!``.
    """

    dim: int
    points: np.ndarray
    weights: np.ndarray
    exactness_degree: int

    def __len__(self) -> int:
        return len(self.weights)


def _collapsed_rule(dim: int, n: int):
    """Conical-product Gauss-Jacobi rule with n points per direction."""
    if dim == 1:
        s, w = roots_legendre(n)
        return ((s + 1) / 2)[:, None], w / 2
    s, w = roots_jacobi(n, dim - 1, 0)
    t = (s + 1) / 2
    wt = w / 2**dim
    sub_pts, sub_w = _collapsed_rule(dim - 1, n)
    pts = np.concatenate(
        [
            np.repeat(t, len(sub_w))[:, None],
            ((1 - t)[:, None, None] * sub_pts[None, :, :]).reshape(-1, dim - 1),
        ],
        axis=1,
    )
    return pts, np.outer(wt, sub_w).ravel()


@lru_cache(maxsize=None)
def simplex_quadrature(dim: int, exact_degree: int) -> QuadratureRule:
    """Quadrature on the reference simplex exact for polynomials of ``exact_degree``.

    Degree 0 and 1 use the centroid; higher degrees use a collapsed
    Gauss-Jacobi product rule (positive weights, interior points).
    """
    if dim not in (1, 2, 3):
        raise ValueError(f"unsupported simplex dimension {dim!r}")
    if not 0 <= exact_degree <= MAX_QUADRATURE_DEGREE:
        raise ValueError(
            f"exact_degree must be in 0..{MAX_QUADRATURE_DEGREE}, got {exact_degree!r}"
        )
    if exact_degree <= 1:
        xs = np.full((1, dim), 1.0 / (dim + 1))
        ws = np.array([1.0 / math.factorial(dim)])
    else:
        xs, ws = _collapsed_rule(dim, (exact_degree + 2) // 2)
    bary = np.concatenate([1.0 - xs.sum(axis=1, keepdims=True), xs], axis=1)
    bary.setflags(write=False)
    ws.setflags(write=False)
    return QuadratureRule(dim=dim, points=bary, weights=ws, exactness_degree=exact_degree)


def facet_quadrature(dim: int, exact_degree: int) -> QuadratureRule:
    """Rule on the (dim-1)-simplex bounding a ``dim``-dimensional cell."""
    if dim not in (2, 3):
        raise ValueError(f"unsupported cell dimension {dim!r}")
    return simplex_quadrature(dim - 1, exact_degree)


@lru_cache(maxsize=None)
def facet_points(dim: int, exact_degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Facet quadrature lifted into cell barycentric coordinates.

    Returns
    -------
    points : ndarray, shape (dim+1, nq, dim+1)
        ``points[i]`` lies on the facet opposite local vertex ``i``.
    weights : ndarray, shape (nq,)
        Normalized to sum to 1, so a facet integral is ``measure * sum(w f)``.
    """
    rule = facet_quadrature(dim, exact_degree)
    pts = np.zeros((dim + 1, len(rule), dim + 1))
    for i in range(dim + 1):
        others = [j for j in range(dim + 1) if j != i]
        pts[i][:, others] = rule.points
    w = rule.weights / rule.weights.sum()
    pts.setflags(write=False)
    w.setflags(write=False)
    return pts, w
