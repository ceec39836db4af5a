"""Spectral simulation and verification of parabolic stochastic evolution equations."""

__version__ = "0.1.0"

from .errors import (ConfigError, ContractError, DegenerateProblemError, DivergenceError, DomainError,
                     HypothesisError, InsufficientDataError, PremiseError, ShapeError)
from .spectral import SpectralOperator, iota, make_example_operator
from .function_spaces import WeightedHolderPath, graded_grid, holder_norm, make_forcing
from .noise import WienerIncrements, make_noise
from .linear import InitialCondition, LinearProblem, LinearSPDESolver, solve_linear
from .semilinear import Nonlinearity, PicardSolver, SemilinearProblem, picard_iterate
from .regularity import HolderExponentEstimator, bound_audit, increment_moments

__all__ = [
    "ConfigError", "ContractError", "DegenerateProblemError", "DivergenceError", "DomainError",
    "HypothesisError", "InsufficientDataError", "PremiseError", "ShapeError",
    "SpectralOperator", "iota", "make_example_operator",
    "WeightedHolderPath", "graded_grid", "holder_norm", "make_forcing",
    "WienerIncrements", "make_noise",
    "InitialCondition", "LinearProblem", "LinearSPDESolver", "solve_linear",
    "Nonlinearity", "PicardSolver", "SemilinearProblem", "picard_iterate",
    "HolderExponentEstimator", "bound_audit", "increment_moments",
]
