"""Exit-cost distributions, bounds, and threshold-optimal control for PDMPs."""

from .errors import ConfigError, ConvergenceError, NumericsError, PdmpError, SingularSystemError
from .model import (
    CdfField,
    ControlSet,
    ExitSpec,
    Grid,
    MinCostField,
    ModeSpec,
    ProblemSpec,
    RateBounds,
    RateMatrix,
    ScalarField,
    VectorField,
    build_grid,
    cfl_max_ds,
    transition_probabilities,
)
from . import bounds, catalog, cdf_solver, control, discrete, simulate

__version__ = "0.1.0"

__all__ = [
    "CdfField", "ControlSet", "ExitSpec", "Grid", "MinCostField", "ModeSpec",
    "ProblemSpec", "RateBounds", "RateMatrix", "ScalarField", "VectorField",
    "build_grid", "cfl_max_ds", "transition_probabilities",
    "bounds", "catalog", "cdf_solver", "control", "discrete", "simulate",
    "ConfigError", "ConvergenceError", "NumericsError", "PdmpError", "SingularSystemError",
]
