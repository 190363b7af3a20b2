"""Flux-conserving post-processing of P_k Lagrange finite element solutions."""

from .assembly import (
    FeFunction,
    FeSpace,
    apply_dirichlet,
    assemble_load,
    assemble_stiffness,
    nodal_interpolant,
)
from .bubbles import (
    STANDARD,
    BubbleKind,
    CorrectedSolution,
    build_corrected,
    compute_gammas,
    orthogonal,
)
from .flux import FluxReport, flux_norms, flux_residuals
from .mesh import Mesh, build_structured, cell_geometry
from .solver import cg_solve
from .study import builtin_problem, emit_table, error_norms, run_convergence

__version__ = "0.1.0"
