"""Numerical null-controllability toolkit.

Steers 2x2 reaction-diffusion systems with power coupling to zero using
controls that are exact odd powers (or complex even powers) of regular grid
functions, and records the weighted-inequality diagnostics behind the
construction at desk scale.
"""

from .carleman import (
    ExponentTable,
    WeightSystem,
    build_weights,
    carleman_ratio_l2,
    carleman_ratio_l2kp2,
    choose_s,
    exponent_table,
    observability_ratio,
)
from .errors import ConfigurationError, SolverError, StagnationError
from .grid import (
    Cutoff,
    Grids,
    SpaceTimeField,
    SpatialGrid,
    TimeGrid,
    lp_norm,
    make_cutoff,
    space_lp_norm,
    weighted_lq_norm,
)
from .heat import (
    ParabolicOperator,
    TimeStepper,
    adjoint_solve,
    apply_heat_operator,
    duality_terms,
    forward_solve,
)
from .rum import (
    RumIterate,
    RumProblem,
    RumResult,
    el_residual,
    epsilon_sweep,
    evaluate_J,
    fixed_point_step,
    linear_hum_oracle,
    make_iterate,
    odd_root,
    solve_rum,
    xp_norm_diagnostic,
)

__version__ = "0.1.0"
