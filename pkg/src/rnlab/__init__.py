"""rnlab: a numerical lab for the 1D stochastic continuity equation with rough drift.

    du + (b u)' dt + u' o dB = 0

Modules: ``brownian`` (paths, refinement, partition-sum integrals), ``drift``
(catalog, mollification, Hypothesis norms), ``flow`` (characteristics and
Jacobians), ``spde`` (densities, weak residual), ``estimates`` (Monte Carlo
checks) and ``experiments`` (scenarios and CLI).
"""
from rnlab.brownian import BrownianPath, TimeGrid, refine, sample_path, sample_paths
from rnlab.drift import DriftField, catalog, check_hypothesis, mollify, primitive_triple
from rnlab.errors import (
    ConfigError,
    GridMismatch,
    MassDriftExceeded,
    MissingDerivative,
    MissingSemimartingaleParts,
    MonotonicityViolation,
    NonFiniteState,
    NumericalFailure,
    QueryOutsideRange,
    RnlabError,
)
from rnlab.flow import FlowSolution, invert_flow, jacobian_iwk, jacobian_variational, solve_backward, solve_forward
from rnlab.spde import DensityField, initial_datum, solve_by_characteristics, weak_residual

__version__ = "0.1.0"

__all__ = [
    "BrownianPath",
    "ConfigError",
    "DensityField",
    "DriftField",
    "FlowSolution",
    "GridMismatch",
    "MassDriftExceeded",
    "MissingDerivative",
    "MissingSemimartingaleParts",
    "MonotonicityViolation",
    "NonFiniteState",
    "NumericalFailure",
    "QueryOutsideRange",
    "RnlabError",
    "TimeGrid",
    "catalog",
    "check_hypothesis",
    "initial_datum",
    "invert_flow",
    "jacobian_iwk",
    "jacobian_variational",
    "mollify",
    "primitive_triple",
    "refine",
    "sample_path",
    "sample_paths",
    "solve_backward",
    "solve_by_characteristics",
    "solve_forward",
    "weak_residual",
]
