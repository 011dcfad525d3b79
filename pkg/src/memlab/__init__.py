"""Numerical lab for a reaction-diffusion equation with a Volterra memory
source and a nonlocal Neumann boundary law."""
from .errors import *  # noqa: F401,F403
from .problem import (BoundaryKernel, Domain1D, InitialData, ModelParams, Problem,
                      build_epsilon_initial, compatibility_residual, make_compatible_initial,
                      make_params)
from .solver import SolverConfig, Trajectory, solve
from .greens import NeumannHeatKernel, PicardConfig, picard_solve

__version__ = "0.1.0"

__all__ = [
    "BoundaryKernel", "Domain1D", "InitialData", "ModelParams", "Problem", "build_epsilon_initial",
    "compatibility_residual", "make_compatible_initial", "make_params", "SolverConfig", "Trajectory",
    "solve", "NeumannHeatKernel", "PicardConfig", "picard_solve",
]
