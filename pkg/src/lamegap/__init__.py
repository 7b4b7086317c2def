"""Lame system with two rigid inclusions separated by a narrow gap.

Meshing, P1 limit and stiff-inclusion solves, the decomposition into rigid-mode
fields, the coefficient system for the rigid displacements, explicit auxiliary
fields for the gap, and the epsilon-sweep experiments built on top.
"""
from .geometry import GapGeometry, InclusionShape, ShapeKind
from .elasticity import ElasticConstants, VectorField
from .kernels import BACKEND
from .meshgen import Mesh, build_mesh
from .sparsela import SolverOptions
from .solvers import solve_limit, solve_finite, solve_decomposition

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ElasticConstants",
    "GapGeometry",
    "InclusionShape",
    "Mesh",
    "ShapeKind",
    "SolverOptions",
    "VectorField",
    "build_mesh",
    "solve_decomposition",
    "solve_finite",
    "solve_limit",
]
