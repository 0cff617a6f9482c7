"""Rotating periodic orbits z(t + T) = Q z(t) on convex energy surfaces.

The main entry points are :class:`ProblemSpec` and :func:`solve`; the
submodules expose the individual stages (normal form, loop space, gauge
Hamiltonian, dual descent, verification).
"""
from .errors import NumericalError, RotorbitsError, ValidationError
from .problem import ProblemSpec, SolveResult, solve, verify_directory, write_outputs
from .symplectic import SymplecticRotation, normal_form, reconstruct, tilde_angles

__version__ = "0.1.0"

__all__ = [
    "NumericalError",
    "ProblemSpec",
    "RotorbitsError",
    "SolveResult",
    "SymplecticRotation",
    "ValidationError",
    "normal_form",
    "reconstruct",
    "solve",
    "tilde_angles",
    "verify_directory",
    "write_outputs",
]
