"""High-order EM surface-scattering solver with an H-matrix direct engine."""

from . import (assembly, chebyshev, errors, geometry, hmatrix, kernels,
               mie, postprocess, quadrature, solver)
from .kernels import Dipole, FormulationSpec, Medium, PlaneWave
from .mie import MieSpec
from .solver import Problem, SolveResult, solve_dense, solve_direct, solve_gmres

__all__ = [
    "assembly", "chebyshev", "errors", "geometry", "hmatrix",
    "kernels", "mie", "postprocess", "quadrature", "solver",
    "Dipole", "FormulationSpec", "Medium", "PlaneWave", "MieSpec",
    "Problem", "SolveResult", "solve_dense", "solve_direct", "solve_gmres",
]

__version__ = "0.1.0"
