"""Exponential-cone geometry and conic solvers."""
from .cone import contains, dual_contains, project, project_polar, to_standard, from_standard
from .program import ConeProgram, SolveReport, SolveStatus
from .admm import AdmmOptions, solve_admm
from .backends import available_engines, register_engine, solve

__all__ = [
    "AdmmOptions", "ConeProgram", "SolveReport", "SolveStatus", "available_engines",
    "contains", "dual_contains", "from_standard", "project", "project_polar",
    "register_engine", "solve", "solve_admm", "to_standard",
]
