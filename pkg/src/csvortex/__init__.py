"""Numerical solutions of the rank-2 Chern-Simons vortex equations on a flat torus."""

from .algebra import CouplingMatrix, GaugePreset, PhysicalParams, VortexNumbers, from_preset, nonexistence_threshold
from .diagnostics import SolutionReport, verify
from .solver import SolutionState, SolveOptions, continuation, find_second_solution, minimize_Jplus, refine_newton, solve
from .torus import TorusGrid, TorusLattice, VortexSet, build_background

__all__ = [
    "CouplingMatrix", "GaugePreset", "PhysicalParams", "VortexNumbers", "from_preset", "nonexistence_threshold",
    "SolutionReport", "verify", "SolutionState", "SolveOptions", "continuation", "find_second_solution",
    "minimize_Jplus", "refine_newton", "solve", "TorusGrid", "TorusLattice", "VortexSet", "build_background",
]
__version__ = "0.1.0"
