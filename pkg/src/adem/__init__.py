"""Adaptive-timestep Euler-Maruyama for SDEs with non-globally-Lipschitz drift."""

from .brownian import BridgeCursor, BrownianBatch, BrownianDomainError, BrownianPath, increment, sample_at
from .harness import (
    ConvergenceReport,
    MomentReport,
    StepCountRow,
    SweepRow,
    coupled_error_sample,
    coupled_errors,
    fit_order,
    fit_order_stderr,
    moment_sweep,
    step_count_stats,
    strong_error_sweep,
)
from .models import CATALOGUE, DriftDomainError, ModelError, SdeModel, make_model
from .rng import philox4x32, standard_normals
from .schemes import (
    SCHEMES,
    AdaptiveEM,
    BackwardEuler,
    ImplicitSolverError,
    NewtonOptions,
    SchemeError,
    SplitStepBE,
    TamedEM,
    TruncatedEM,
    UniformEM,
    integrate,
    make_scheme,
    scheme_family,
    simulate,
)
from .stepcontrol import (
    GrowthParams,
    Mode,
    PolicyError,
    RatioVariant,
    TimestepPolicy,
    check_lower_bound,
    check_timestep_assumption,
    constant_policy,
    h_delta,
    ratio_policy,
    sample_states,
    scalar_power_policy,
)

__all__ = [name for name in dir() if not name.startswith("_")]
