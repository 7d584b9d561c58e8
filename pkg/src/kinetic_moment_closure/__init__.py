"""High-order realizability-preserving M_N moment closures for slab transport."""

from kinetic_moment_closure.config import RunConfig, load_run_config
from kinetic_moment_closure.entropy_optimizer import solve_cells, solve_with_regularization
from kinetic_moment_closure.problems import (
    ManufacturedProblem,
    PlaneSourceProblem,
    SourceBeamProblem,
    convergence_study,
    error_norms,
    make_problem,
    observed_order,
    pn_reference,
)
from kinetic_moment_closure.quadrature import build_angular, build_spatial
from kinetic_moment_closure.solver import KineticScheme, RunResult, run
from kinetic_moment_closure.time_integration import tableau

__all__ = [
    "KineticScheme",
    "ManufacturedProblem",
    "PlaneSourceProblem",
    "RunConfig",
    "RunResult",
    "SourceBeamProblem",
    "build_angular",
    "build_spatial",
    "convergence_study",
    "error_norms",
    "load_run_config",
    "make_problem",
    "observed_order",
    "pn_reference",
    "run",
    "solve_cells",
    "solve_with_regularization",
    "tableau",
]
