"""Recovery of binary source regions in advection-diffusion flows.

Two-stage pipeline: a box-constrained relaxed optimal control problem
solved by a primal-dual active-set semismooth Newton method provides a
coarse initial guess, which a level-set shape optimization then rounds and
refines on a finer grid, allowing inclusions to split and merge.
"""

from .estimator import SourceIdentifier
from .fem import ModelCoefficients
from .grid import ScalarField, StructuredGrid, VectorField, build_grid, prolongate, refine
from .levelset import LevelSet, TransportParams, count_components, round_to_levelset
from .synth import InclusionGeometry, NoiseSpec, default_geometry

__version__ = "0.1.0"

__all__ = [
    "SourceIdentifier",
    "ModelCoefficients",
    "ScalarField",
    "StructuredGrid",
    "VectorField",
    "build_grid",
    "prolongate",
    "refine",
    "LevelSet",
    "TransportParams",
    "count_components",
    "round_to_levelset",
    "InclusionGeometry",
    "NoiseSpec",
    "default_geometry",
]
