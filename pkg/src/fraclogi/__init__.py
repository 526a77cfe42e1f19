"""Nonlocal logistic equations driven by the fractional p-Laplacian.

Desk-scale simulator for steady states, first eigenvalues and parabolic
trajectories of

    (-Delta)^s_p u = lambda u^q - b(x) u^r   in Omega,   u = 0 outside Omega,

together with the diagnostics used to check qualitative behaviour
(ordering, stabilization, blow-up, potential-well dichotomy).
"""

from fraclogi.grid import Grid, build_grid, build_absorption, distance_profile
from fraclogi.nonlocal_op import NonlocalOperator, OperatorParams, assemble
from fraclogi.eigen import EigenResult, first_eigen, weighted_eigen
from fraclogi.diagnostics import (
    WellReport,
    classify_initial,
    classify_trajectory,
    mountain_level,
    theta_star,
    well_energies,
)
from fraclogi.elliptic import (
    LambdaRange,
    Problem,
    SteadyState,
    energy_J,
    grad_J,
    check_comparison,
    lambda_range,
    lambda_sweep,
    solve_subhomogeneous,
    solve_superlinear,
)
from fraclogi.parabolic import (
    SchemeConfig,
    Trajectory,
    accretivity_test,
    energy_audit,
    evolve,
    horizon_policy,
    implicit_step,
)

__version__ = "0.1.0"

__all__ = [
    "Grid",
    "build_grid",
    "build_absorption",
    "distance_profile",
    "NonlocalOperator",
    "OperatorParams",
    "assemble",
    "EigenResult",
    "first_eigen",
    "weighted_eigen",
    "WellReport",
    "classify_initial",
    "classify_trajectory",
    "mountain_level",
    "theta_star",
    "well_energies",
    "LambdaRange",
    "Problem",
    "SteadyState",
    "energy_J",
    "grad_J",
    "check_comparison",
    "lambda_range",
    "lambda_sweep",
    "solve_subhomogeneous",
    "solve_superlinear",
    "SchemeConfig",
    "Trajectory",
    "accretivity_test",
    "energy_audit",
    "evolve",
    "horizon_policy",
    "implicit_step",
]
