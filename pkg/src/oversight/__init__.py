"""Equilibria of a continuous-time trust and inspection game: solver, grid oracle, simulator."""
from .model_core import BoundaryValues, ModelParams, validate_params
from .equilibrium_solver import (
    EquilibriumSolution,
    solve_all,
    solve_breakdown,
    solve_disclosure,
    solve_periodic,
    solve_recovery,
    thresholds,
)

__version__ = "0.1.0"

__all__ = [
    "BoundaryValues",
    "EquilibriumSolution",
    "ModelParams",
    "solve_all",
    "solve_breakdown",
    "solve_disclosure",
    "solve_periodic",
    "solve_recovery",
    "thresholds",
    "validate_params",
]
