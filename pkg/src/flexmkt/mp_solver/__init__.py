"""Embedded mathematical-programming core: LP model, simplex, one-hot
branch-and-bound, and LP-file export."""

from .branch_bound import solve_milp
from .lpfile import export_lp
from .model import INF, LinearProgram, MixedProgram, Solution
from .simplex import solve_lp

__all__ = ["INF", "LinearProgram", "MixedProgram", "Solution",
           "solve_lp", "solve_milp", "export_lp"]
