"""Stochastic majorization-minimization for compound stochastic programs."""

from .problem import (
    CompoundProblem,
    DcMaxSmooth,
    DcSmoothConcave,
    InnerMap,
    OuterMap,
    Piece,
    ProblemStructureError,
    RandomFn,
    ScalarConvexOracle,
    Smooth,
    Stack,
    ValidationReport,
    VecOracle,
    linear_fn,
    penalize_constraints,
    phi_identity,
    phi_positive_part,
    phi_sum_positive,
    psi_identity,
    psi_weighted_max,
    psi_weighted_sum,
    validate_problem,
)
from .sampling import (
    GrowthSchedule,
    ScheduleError,
    saa_objective,
    saa_rate_experiment,
    schedule_generate,
    schedule_validate,
)
from .sets import Ball, Box, Custom, FeasibleSet, Product, Simplex, project
from .smm import (
    IterateTrace,
    ResidualReport,
    SmmConfig,
    StoppingRule,
    fixed_point_residual,
    run_enhanced_smm,
    run_smm,
)
from .streams import EmpiricalRows, FiniteMixture, Gaussian, SampleBatch, SampleStream, Stacked
from .subsolver import SubsolverConfig, solve_prox, solve_prox_enumerated
from .surrogate import (
    EpsActiveSet,
    SurrogateModel,
    build_dc_surrogate,
    build_maxsmooth_surrogate,
    build_model,
    build_smooth_surrogate,
)

__version__ = "0.1.0"

__all__ = [
    "Ball",
    "Box",
    "CompoundProblem",
    "Custom",
    "DcMaxSmooth",
    "DcSmoothConcave",
    "EmpiricalRows",
    "EpsActiveSet",
    "FeasibleSet",
    "FiniteMixture",
    "Gaussian",
    "GrowthSchedule",
    "InnerMap",
    "IterateTrace",
    "OuterMap",
    "Piece",
    "ProblemStructureError",
    "Product",
    "RandomFn",
    "ResidualReport",
    "SampleBatch",
    "SampleStream",
    "ScalarConvexOracle",
    "ScheduleError",
    "Simplex",
    "SmmConfig",
    "Smooth",
    "Stack",
    "Stacked",
    "StoppingRule",
    "SubsolverConfig",
    "SurrogateModel",
    "ValidationReport",
    "VecOracle",
    "build_dc_surrogate",
    "build_maxsmooth_surrogate",
    "build_model",
    "build_smooth_surrogate",
    "fixed_point_residual",
    "linear_fn",
    "penalize_constraints",
    "phi_identity",
    "phi_positive_part",
    "phi_sum_positive",
    "project",
    "psi_identity",
    "psi_weighted_max",
    "psi_weighted_sum",
    "run_enhanced_smm",
    "run_smm",
    "saa_objective",
    "saa_rate_experiment",
    "schedule_generate",
    "schedule_validate",
    "solve_prox",
    "solve_prox_enumerated",
    "validate_problem",
]
