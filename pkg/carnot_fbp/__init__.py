"""Free boundary problems with a singular term on stratified groups: grid solvers, oracles and diagnostics."""

from .auxiliary import beta_star_estimate, principal_eigenpair, solve_singular
from .config import ConfigFactory, RunConfig
from .continuation import (
    ContinuationSchedule,
    energy_sandwich_check,
    extract_free_boundary,
    jump_check,
    radon_measure_check,
    run_continuation,
)
from .contracts import (
    CarnotError,
    ConfigError,
    GeometryFailureError,
    InvalidArgumentError,
    SolverError,
    VerificationError,
)
from .geometry import Grid, GroupModel, ScalarField, dilate, group_model, homogeneous_dimension, make_grid
from .model import CutoffContext, GKind, ModelParams, energy_eps, energy_exact, residual_eps
from .operators import assemble_sub_laplacian, horizontal_gradient
from .solvers import build_truncated, estimate_m1, minimize_energy, mountain_pass, ordering_check

__version__ = "0.4.0"

__all__ = [
    "Grid",
    "GroupModel",
    "ScalarField",
    "group_model",
    "make_grid",
    "dilate",
    "homogeneous_dimension",
    "assemble_sub_laplacian",
    "horizontal_gradient",
    "ModelParams",
    "GKind",
    "CutoffContext",
    "energy_exact",
    "energy_eps",
    "residual_eps",
    "principal_eigenpair",
    "solve_singular",
    "beta_star_estimate",
    "minimize_energy",
    "estimate_m1",
    "build_truncated",
    "mountain_pass",
    "ordering_check",
    "ContinuationSchedule",
    "run_continuation",
    "extract_free_boundary",
    "jump_check",
    "energy_sandwich_check",
    "radon_measure_check",
    "RunConfig",
    "ConfigFactory",
    "CarnotError",
    "ConfigError",
    "InvalidArgumentError",
    "SolverError",
    "GeometryFailureError",
    "VerificationError",
]
