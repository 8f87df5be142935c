"""GRAPE-style gate optimization with exact first and second derivatives."""

from .models import (
    TransmonParams,
    cnot_target,
    derived_couplings,
    drive_bounds,
    transmon_effective_system,
    two_level_example,
)
from .objective import (
    BilinearSystem,
    ControlPulse,
    GateObjective,
    build_cache,
    evaluate,
    gradient,
    hessian,
    infidelity,
    state_transfer_objective,
)
from .optimize import (
    BFGS,
    GRADIENT_DESCENT,
    NEWTON,
    OptimizationReport,
    OptimizerConfig,
    SeedSpec,
    gradient_descent_fixed,
    minimize,
    multistart,
)

__all__ = [
    "BFGS", "GRADIENT_DESCENT", "NEWTON",
    "BilinearSystem", "ControlPulse", "GateObjective", "OptimizationReport", "OptimizerConfig",
    "SeedSpec", "TransmonParams",
    "build_cache", "cnot_target", "derived_couplings", "drive_bounds", "evaluate", "gradient",
    "gradient_descent_fixed", "hessian", "infidelity", "minimize", "multistart",
    "state_transfer_objective", "transmon_effective_system", "two_level_example",
]
