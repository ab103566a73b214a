"""Numerical kernels: least squares, pinball-loss LP, Adam, principal axis."""

from .linalg import as_matrix, principal_axis, solve_least_squares
from .optimize import adam_minimize
from .pinball import PinballFit, PinballProgram, fit_pinball_regression

__all__ = [
    "as_matrix",
    "principal_axis",
    "solve_least_squares",
    "adam_minimize",
    "PinballFit",
    "PinballProgram",
    "fit_pinball_regression",
]
