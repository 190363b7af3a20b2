"""Test problems, error norms and h-refinement convergence sweeps."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .assembly import (
    FeSpace,
    as_field,
    assemble_load,
    assemble_stiffness,
    apply_dirichlet,
    cell_chunks,
    nodal_interpolant,
)
from .bubbles import (
    STANDARD,
    BubbleKind,
    build_corrected,
    compute_gammas,
    orthogonal,
    verify_galerkin_preservation,
)
from .element import MAX_QUADRATURE_DEGREE, facet_points, simplex_quadrature
from .flux import flux_norms, flux_residuals, observed_order
from .mesh import build_structured
from .solver import cg_solve

log = logging.getLogger(__name__)

__all__ = [
    "ProblemSpec",
    "builtin_problem",
    "error_norms",
    "LevelResult",
    "ConvergenceTable",
    "StageError",
    "run_convergence",
    "emit_table",
    "default_levels",
]


@dataclass(frozen=True)
class ProblemSpec:
    """-div(alpha grad u) = f on the unit square/cube with u = 0 on the boundary."""

    name: str
    dim: int
    u: Callable
    grad_u: Callable
    f: Callable
    alpha: object = 1.0
    u_degree: int = 8

    def compatibility_gap(self) -> float:
        """int f + int_boundary alpha du/dn, which vanishes for consistent data."""
        mesh = build_structured(self.dim, 1)
        deg = min(2 * self.u_degree, MAX_QUADRATURE_DEGREE)
        rule = simplex_quadrature(self.dim, deg)
        x = np.einsum("qi,cid->cqd", rule.points, mesh.cell_vertices)
        total = float(np.sum((self.f(x) @ rule.weights) * mesh.volumes) * math.factorial(self.dim))
        alpha = as_field(self.alpha)
        pts, w = facet_points(self.dim, deg)
        n = mesh.cells_per_edge
        for c in range(mesh.num_cells):
            for i in range(self.dim + 1):
                verts = np.delete(mesh.cells[c], i)
                ids = mesh.vertex_ids[verts]
                if not np.any(np.all(ids == 0, axis=0) | np.all(ids == n, axis=0)):
                    continue
                xf = pts[i] @ mesh.cell_vertices[c]
                dn = self.grad_u(xf) @ mesh.facet_normals[c, i]
                total += mesh.facet_measures[c, i] * np.sum(w * alpha(xf) * dn)
        return total


def _poly2d():
    def g(t):
        return t**2 * (1 - t) ** 2

    def dg(t):
        return 2 * t * (1 - t) * (1 - 2 * t)

    def d2g(t):
        return 2 - 12 * t + 12 * t**2

    def u(p):
        x, y = p[..., 0], p[..., 1]
        return 256.0 * g(x) * g(y)

    def grad_u(p):
        x, y = p[..., 0], p[..., 1]
        return 256.0 * np.stack([dg(x) * g(y), g(x) * dg(y)], axis=-1)

    def f(p):
        x, y = p[..., 0], p[..., 1]
        return -256.0 * (d2g(x) * g(y) + g(x) * d2g(y))

    return ProblemSpec("poly2d", 2, u, grad_u, f, 1.0, 8)


def _poly3d():
    def q(t):
        return t * (1 - t)

    def dq(t):
        return 1 - 2 * t

    def u(p):
        x, y, z = p[..., 0], p[..., 1], p[..., 2]
        return 64.0 * q(x) * q(y) * q(z)

    def grad_u(p):
        x, y, z = p[..., 0], p[..., 1], p[..., 2]
        return 64.0 * np.stack(
            [dq(x) * q(y) * q(z), q(x) * dq(y) * q(z), q(x) * q(y) * dq(z)], axis=-1
        )

    def f(p):
        x, y, z = p[..., 0], p[..., 1], p[..., 2]
        return 128.0 * (q(y) * q(z) + q(x) * q(z) + q(x) * q(y))

    return ProblemSpec("poly3d", 3, u, grad_u, f, 1.0, 6)


_PROBLEMS = {"poly2d": _poly2d, "poly3d": _poly3d}


def builtin_problem(name: str) -> ProblemSpec:
    try:
        return _PROBLEMS[name]()
    except KeyError:
        raise ValueError(f"unknown problem {name!r}; choose from {sorted(_PROBLEMS)}") from None


class _ExactEvaluator:
    def __init__(self, problem: ProblemSpec, mesh):
        self.problem = problem
        self.mesh = mesh
        self.polynomial_degree = problem.u_degree

    def cell_eval(self, bary, cells=slice(None)):
        x = np.matmul(bary, self.mesh.cell_vertices[cells])
        return self.problem.u(x), self.problem.grad_u(x)


def error_norms(problem: ProblemSpec, fn, reference=None, quad_degree: int | None = None):
    """L2 norm and H1 seminorm of ``reference - fn``.

    ``reference`` defaults to the exact solution; pass the nodal
    interpolant to measure ``I_h u - fn``.
    """
    mesh = fn.space.mesh
    if reference is None:
        reference = _ExactEvaluator(problem, mesh)
    if quad_degree is None:
        deg = max(fn.polynomial_degree, reference.polynomial_degree)
        quad_degree = min(2 * deg, MAX_QUADRATURE_DEGREE)
    rule = simplex_quadrature(mesh.dim, quad_degree)
    jac = mesh.volumes * math.factorial(mesh.dim)
    l2 = 0.0
    h1 = 0.0
    for chunk in cell_chunks(mesh.num_cells, len(rule) * 60):
        v, g = fn.cell_eval(rule.points, chunk)
        rv, rg = reference.cell_eval(rule.points, chunk)
        l2 += float(((rv - v) ** 2 @ rule.weights) @ jac[chunk])
        h1 += float((np.sum((rg - g) ** 2, axis=2) @ rule.weights) @ jac[chunk])
    return math.sqrt(l2), math.sqrt(h1)


class StageError(RuntimeError):
    """A sweep failure tagged with the stage and level that raised it."""

    def __init__(self, stage: str, level: int, cause: BaseException):
        super().__init__(f"stage '{stage}' failed at level {level}: {cause}")
        self.stage = stage
        self.level = level
        self.cause = cause


@dataclass
class LevelResult:
    level: int
    h: float
    dof: int
    cg_iterations: int
    e_l2: float  # I_h u - u_h
    e_h1: float
    E_l2: float  # u - u_h
    E_h1: float
    flux_l1: float
    flux_l2: float
    flux_linf: float
    te_l2: float | None = None  # I_h u - corrected
    te_h1: float | None = None
    tE_l2: float | None = None  # u - corrected
    tE_h1: float | None = None
    tflux_l1: float | None = None
    tflux_l2: float | None = None
    tflux_linf: float | None = None
    ub_h1: float | None = None
    gamma_max: float | None = None
    galerkin_residual: float | None = None
    seconds: float = 0.0

    @property
    def energy_slack(self) -> float | None:
        """min of the two gaps in |E| <= |E~| <= |E| + |u_b| (H1 seminorms)."""
        if self.tE_h1 is None:
            return None
        return min(self.tE_h1 - self.E_h1, self.E_h1 + self.ub_h1 - self.tE_h1)


# (column key, header label); rates are emitted after each error column.
_ERROR_COLUMNS = [
    ("e_l2", "|e_h|_L2"),
    ("e_h1", "|e_h|_H1"),
    ("flux_l1", "|E_h|_*"),
    ("E_l2", "|u-u_h|_L2"),
    ("E_h1", "|u-u_h|_H1"),
    ("flux_l2", "flux_l2"),
    ("flux_linf", "flux_linf"),
    ("te_l2", "|te_h|_L2"),
    ("te_h1", "|te_h|_H1"),
    ("tflux_l1", "|tE_h|_*"),
    ("tE_l2", "|u-tu_h|_L2"),
    ("tE_h1", "|u-tu_h|_H1"),
    ("ub_h1", "|u_b|_H1"),
]
_TEXT_COLUMNS = ["e_l2", "e_h1", "flux_l1", "te_l2", "te_h1", "tflux_l1"]
_ZERO_FLUX_COLUMNS = {"tflux_l1"}


@dataclass
class ConvergenceTable:
    problem: str
    dim: int
    degree: int
    bubble: str
    cg_tol: float
    rows: list[LevelResult] = field(default_factory=list)

    def column(self, key: str) -> list:
        return [getattr(r, key) for r in self.rows]

    def orders(self, key: str) -> list[float]:
        """Observed orders per row (0.0 on the first row, as in the printed tables)."""
        vals = self.column(key)
        out = [0.0] if vals else []
        for a, b in zip(vals, vals[1:]):
            out.append(float("nan") if a is None or b is None else observed_order(a, b))
        return out

    def finest_order(self, key: str) -> float:
        vals = self.column(key)
        if len(vals) < 2:
            raise ValueError("need at least two levels for an order")
        return observed_order(vals[-2], vals[-1])

    def has_corrected(self) -> bool:
        return bool(self.rows) and self.rows[0].te_h1 is not None

    def records(self) -> list[dict]:
        recs = []
        for i, r in enumerate(self.rows):
            rec = {"level": r.level, "h": r.h, "dof": r.dof, "cg_iterations": r.cg_iterations}
            for key, _ in _ERROR_COLUMNS:
                rec[key] = getattr(r, key)
                rec[f"{key}_order"] = self.orders(key)[i]
            rec["gamma_max"] = r.gamma_max
            rec["galerkin_residual"] = r.galerkin_residual
            rec["energy_slack"] = r.energy_slack
            rec["seconds"] = r.seconds
            recs.append(rec)
        return recs


def default_levels(dim: int, degree: int) -> range:
    if dim == 2:
        return range(1, 7)
    if degree <= 3:
        return range(1, 6)
    return range(1, 5)


def _resolve_bubble(bubble, dim: int, degree: int) -> BubbleKind | None:
    if bubble is None or isinstance(bubble, BubbleKind):
        kind = bubble
    elif bubble == "none":
        kind = None
    elif bubble == "standard":
        kind = STANDARD
    elif bubble == "orthogonal":
        kind = orthogonal(degree + 2)
    else:
        raise ValueError(f"unknown bubble option {bubble!r}")
    if kind is not None:
        kind.check_dim(dim)
    return kind


def _run_level(problem, degree, level, kind, cg_tol, keep):
    stage = "mesh"
    try:
        t0 = time.perf_counter()
        mesh = build_structured(problem.dim, level)
        space = FeSpace(mesh, degree)
        stage = "assemble"
        mat = assemble_stiffness(space, problem.alpha)
        rhs = assemble_load(space, problem.f)
        reduced = apply_dirichlet(mat, rhs, space)
        stage = "solve"
        if reduced.rhs.size:
            report = cg_solve(reduced.matrix, reduced.rhs, cg_tol)
            coeffs, iters = reduced.expand(report.solution), report.iterations
        else:
            coeffs, iters = reduced.expand(np.zeros(0)), 0
        u_h = space.function(coeffs)
        stage = "norms"
        interp = nodal_interpolant(space, problem.u)
        e_l2, e_h1 = error_norms(problem, u_h, interp)
        E_l2, E_h1 = error_norms(problem, u_h)
        stage = "flux"
        flux = flux_norms(flux_residuals(space, u_h, problem.alpha, problem.f))
        row = LevelResult(
            level=level, h=mesh.h, dof=space.dof_total, cg_iterations=iters,
            e_l2=e_l2, e_h1=e_h1, E_l2=E_l2, E_h1=E_h1,
            flux_l1=flux.l1, flux_l2=flux.l2, flux_linf=flux.linf,
        )
        extras = {"mesh": mesh, "space": space, "u_h": u_h, "flux": flux}
        if kind is not None:
            stage = "correct"
            gammas = compute_gammas(space, u_h, problem.alpha, problem.f, kind)
            corrected = build_corrected(u_h, gammas, kind)
            tflux = flux_norms(flux_residuals(space, corrected, problem.alpha, problem.f))
            row.te_l2, row.te_h1 = error_norms(problem, corrected, interp)
            row.tE_l2, row.tE_h1 = error_norms(problem, corrected)
            row.tflux_l1, row.tflux_l2, row.tflux_linf = tflux.l1, tflux.l2, tflux.linf
            row.ub_h1 = _h1_of(corrected.bubbles, mesh)
            row.gamma_max = float(np.max(np.abs(gammas)))
            if kind.tag == "orthogonal" and hasattr(as_field(problem.alpha), "constant"):
                stage = "galerkin"
                row.galerkin_residual = verify_galerkin_preservation(
                    space, u_h, corrected, problem.f, problem.alpha
                )
            extras.update(corrected=corrected, tflux=tflux)
        row.seconds = time.perf_counter() - t0
        if keep is not None:
            keep[level] = extras
        return row
    except StageError:
        raise
    except Exception as exc:  # noqa: BLE001 - re-raised with stage context
        raise StageError(stage, level, exc) from exc


def _h1_of(fn, mesh) -> float:
    rule = simplex_quadrature(mesh.dim, min(2 * fn.polynomial_degree, MAX_QUADRATURE_DEGREE))
    jac = mesh.volumes * math.factorial(mesh.dim)
    total = 0.0
    for chunk in cell_chunks(mesh.num_cells, len(rule) * 20):
        _, g = fn.cell_eval(rule.points, chunk)
        total += float((np.sum(g**2, axis=2) @ rule.weights) @ jac[chunk])
    return math.sqrt(total)


def run_convergence(
    problem: ProblemSpec,
    degree: int,
    levels=None,
    bubble="standard",
    cg_tol: float = 1e-12,
    keep: dict | None = None,
) -> ConvergenceTable:
    """Solve, measure and correct on each level; returns the filled table.

    ``bubble`` is ``"none"``, ``"standard"``, ``"orthogonal"`` (degree+2)
    or a BubbleKind.  If ``keep`` is a dict, per-level objects (mesh, space,
    solutions, flux reports) are stored in it keyed by level.
    """
    kind = _resolve_bubble(bubble, problem.dim, degree)
    if levels is None:
        levels = default_levels(problem.dim, degree)
    table = ConvergenceTable(
        problem=problem.name, dim=problem.dim, degree=degree,
        bubble="none" if kind is None else str(kind), cg_tol=cg_tol,
    )
    for level in levels:
        row = _run_level(problem, degree, level, kind, cg_tol, keep)
        log.info("level %d: dof=%d cg=%d (%.1fs)", level, row.dof, row.cg_iterations, row.seconds)
        table.rows.append(row)
    return table


def _fmt_err(key: str, v) -> str:
    if v is None:
        return "-"
    if key in _ZERO_FLUX_COLUMNS and abs(v) < 5e-9:
        return "0.00000000"
    return f"{v:.5g}"


def emit_table(table: ConvergenceTable, fmt: str = "text") -> str:
    """Render a convergence table as aligned text, CSV or JSON."""
    recs = table.records()
    if fmt == "json":
        meta = {k: getattr(table, k) for k in ("problem", "dim", "degree", "bubble", "cg_tol")}
        return json.dumps({**meta, "rows": recs}, indent=2)
    if fmt == "csv":
        cols = ["level", "h", "dof", "cg_iterations"]
        for key, _ in _ERROR_COLUMNS:
            cols += [key, f"{key}_order"]
        cols += ["gamma_max", "galerkin_residual", "energy_slack", "seconds"]
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        writer.writeheader()
        for rec in recs:
            writer.writerow({k: ("" if rec[k] is None else rec[k]) for k in cols})
        return buf.getvalue()
    if fmt != "text":
        raise ValueError(f"unknown table format {fmt!r}")
    labels = dict(_ERROR_COLUMNS)
    keys = _TEXT_COLUMNS if table.has_corrected() or not table.rows else _TEXT_COLUMNS[:3]
    header = ["lvl"]
    for key in keys:
        header += [labels[key], "h^n"]
    header += ["#cg", "dof"]
    lines = [header]
    for i, r in enumerate(table.rows):
        line = [str(r.level)]
        for key in keys:
            line += [_fmt_err(key, getattr(r, key)), f"{table.orders(key)[i]:.1f}"]
        line += [str(r.cg_iterations), str(r.dof)]
        lines.append(line)
    widths = [max(len(row[j]) for row in lines) for j in range(len(header))]
    title = (
        f"# {table.problem}  P{table.degree}  bubble={table.bubble}  cg_tol={table.cg_tol:g}"
    )
    body = ["  ".join(c.rjust(w) for c, w in zip(row, widths)) for row in lines]
    return "\n".join([title] + body) + "\n"
