"""Hybrid Monte Carlo / deterministic transport solvers for 1D slabs.

One-group, steady-state, isotropic scattering, vacuum boundaries.  The
package bundles the analog/implicit-capture Monte Carlo engine, the closure
estimators, the finite-volume low-order solvers they feed, a discrete-
ordinates benchmark generator, and the statistical experiment harness.
"""

from .problem import (
    ConfigurationError,
    DomainError,
    MaterialRegion,
    Mesh1D,
    RunConfig,
    SlabProblem,
    StudyConfig,
    benchmark_problem,
    build_uniform_mesh,
    cross_sections_at,
    load_config,
)
from .engine import ParticleState, TallySet, run_histories, simulate_history
from .closures import BoundaryFactors, ClosureSet, build_closures, oracle_closures
from .lo_solver import LoSolution, TridiagonalSystem, solve_hybrid, solve_tridiagonal
from .sn import (
    AngularQuadrature,
    BenchmarkSolution,
    CertificationError,
    gauss_legendre,
    refine_and_extrapolate,
    source_iteration,
)
from .experiments import (
    ReplicateResult,
    StudyReport,
    grid_refinement_study,
    linf_error,
    relative_l2_error,
    run_paired_replicate,
    win_ratio,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "ConfigurationError",
    "DomainError",
    "MaterialRegion",
    "Mesh1D",
    "RunConfig",
    "SlabProblem",
    "StudyConfig",
    "benchmark_problem",
    "build_uniform_mesh",
    "cross_sections_at",
    "load_config",
    "ParticleState",
    "TallySet",
    "run_histories",
    "simulate_history",
    "BoundaryFactors",
    "ClosureSet",
    "build_closures",
    "oracle_closures",
    "LoSolution",
    "TridiagonalSystem",
    "solve_hybrid",
    "solve_tridiagonal",
    "AngularQuadrature",
    "BenchmarkSolution",
    "CertificationError",
    "gauss_legendre",
    "refine_and_extrapolate",
    "source_iteration",
    "ReplicateResult",
    "StudyReport",
    "grid_refinement_study",
    "linf_error",
    "relative_l2_error",
    "run_paired_replicate",
    "win_ratio",
]
