"""Command-line convergence study.

Example::

    fluxfem --dim 2 --degree 1 --levels 2..6 --problem poly2d --bubble standard
"""

from __future__ import annotations

import argparse
import logging
import re
import sys
from pathlib import Path

from .bubbles import orthogonal
from .flux import flux_field_export
from .mesh import dump_mesh
from .study import StageError, builtin_problem, default_levels, emit_table, run_convergence

log = logging.getLogger("fluxfem")


def _levels(text: str) -> range:
    m = re.fullmatch(r"\s*(\d+)\s*(?:\.\.\s*(\d+))?\s*", text)
    if not m:
        raise argparse.ArgumentTypeError(f"expected L or L_MIN..L_MAX, got {text!r}")
    lo = int(m.group(1))
    hi = int(m.group(2) or lo)
    if lo < 1 or hi < lo:
        raise argparse.ArgumentTypeError(f"invalid level range {text!r}")
    return range(lo, hi + 1)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="fluxfem",
        description="P_k finite element convergence study with flux-conserving bubble correction.",
    )
    p.add_argument("--dim", type=int, choices=(2, 3), default=2)
    p.add_argument("--degree", type=int, default=1, help="polynomial degree k")
    p.add_argument("--levels", type=_levels, default=None, help="L or L_MIN..L_MAX")
    p.add_argument("--problem", choices=("poly2d", "poly3d"), default=None,
                   help="defaults to poly2d/poly3d matching --dim")
    p.add_argument("--bubble", choices=("none", "standard", "orthogonal"), default="standard")
    p.add_argument("--bubble-order", type=int, default=None,
                   help="order of orthogonal bubbles (default degree+2)")
    p.add_argument("--cg-tol", type=float, default=1e-12)
    p.add_argument("--format", choices=("text", "csv", "json"), default="text")
    p.add_argument("--output", type=Path, default=None, help="write the table here instead of stdout")
    p.add_argument("--flux-field", type=Path, default=None,
                   help="write |F_tau| of the finest level (.csv or .vtk); "
                        "'{level}' in the name writes every level")
    p.add_argument("--mesh-dump", type=Path, default=None,
                   help="write the finest mesh as CSV; '{level}' writes every level")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _per_level_paths(template: Path, levels) -> dict:
    if "{level}" in str(template):
        return {lv: Path(str(template).format(level=lv)) for lv in levels}
    return {levels[-1]: template}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    stage = "setup"
    try:
        problem = builtin_problem(args.problem or f"poly{args.dim}d")
        if problem.dim != args.dim:
            raise ValueError(f"problem {problem.name} is {problem.dim}D but --dim is {args.dim}")
        levels = args.levels or default_levels(args.dim, args.degree)
        bubble = args.bubble
        if bubble == "orthogonal":
            bubble = orthogonal(args.bubble_order or args.degree + 2)
        elif args.bubble_order is not None:
            raise ValueError("--bubble-order only applies to --bubble orthogonal")
        keep = {} if (args.flux_field or args.mesh_dump) else None
        table = run_convergence(problem, args.degree, levels, bubble, args.cg_tol, keep=keep)

        stage = "output"
        text = emit_table(table, args.format)
        if args.output:
            args.output.write_text(text)
        else:
            sys.stdout.write(text)
        if args.flux_field:
            for lv, path in _per_level_paths(args.flux_field, levels).items():
                flux_field_export(keep[lv]["flux"], keep[lv]["mesh"], path)
        if args.mesh_dump:
            for lv, path in _per_level_paths(args.mesh_dump, levels).items():
                dump_mesh(keep[lv]["mesh"], path)
    except StageError as exc:
        print(f"fluxfem: error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"fluxfem: error: stage '{stage}' failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
