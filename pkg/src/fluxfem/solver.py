"""Unpreconditioned conjugate gradients with iteration accounting."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["CgReport", "NotPositiveDefiniteError", "CgStagnationError", "cg_solve"]


class NotPositiveDefiniteError(ArithmeticError):
    """Raised when a search direction has non-positive curvature p.Ap."""


class CgStagnationError(RuntimeError):
    """Raised when the residual target is not met within ``max_iter`` steps."""


@dataclass
class CgReport:
    solution: np.ndarray
    iterations: int
    relative_residual: float


def cg_solve(matrix, rhs, rel_tol: float = 1e-12, max_iter: int | None = None, callback=None) -> CgReport:
    """Solve ``matrix @ x = rhs`` from a zero initial guess.

    Stops once ``||rhs - matrix @ x|| <= rel_tol * ||rhs||``.  The residual
    is recomputed from scratch before declaring convergence so that the
    reported value is the true one, not the recursively updated one.

    ``callback(x)`` is called after every iteration.
    """
    if not 0 < rel_tol < 1:
        raise ValueError(f"rel_tol must lie in (0, 1), got {rel_tol!r}")
    b = np.asarray(rhs, dtype=float)
    n = b.shape[0]
    if max_iter is None:
        max_iter = max(10 * n, 100)
    x = np.zeros(n)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return CgReport(x, 0, 0.0)
    target = rel_tol * bnorm
    r = b.copy()
    p = r.copy()
    rr = r @ r
    it = 0
    while True:
        if np.sqrt(rr) <= target:
            true_res = np.linalg.norm(b - matrix @ x)
            if true_res <= target:
                return CgReport(x, it, true_res / bnorm)
            # drifted recursive residual: restart from the true one
            r = b - matrix @ x
            p = r.copy()
            rr = r @ r
        if it >= max_iter:
            raise CgStagnationError(
                f"CG did not reach rel_tol={rel_tol:g} in {max_iter} iterations "
                f"(relative residual {np.sqrt(rr) / bnorm:.3e})"
            )
        ap = matrix @ p
        curv = p @ ap
        if curv <= 0:
            raise NotPositiveDefiniteError(f"non-positive curvature {curv:.3e} at iteration {it}")
        step = rr / curv
        x += step * p
        r -= step * ap
        rr_new = r @ r
        p = r + (rr_new / rr) * p
        rr = rr_new
        it += 1
        if callback is not None:
            callback(x)
