"""Hybrid truss-continuum topology optimization for reinforced-concrete beams.

Concrete is a bi-modulus plane-stress continuum (stiff in compression, soft in
tension), steel is a ground-structure truss with movable nodes coupled to the
continuum by stiffness spreading. Binary and variable-thickness-sheet design
modes share one outer loop driven by a Method of Moving Asymptotes solver.
"""

from .domain import (
    BoundaryConditions,
    ConfigError,
    GroundStructure,
    Mesh,
    Problem,
    RunConfig,
    build_problem,
    total_envelope_volume,
)
from .optimizer import OuterLoop, RunResult, check_gradients, run

__all__ = [
    "BoundaryConditions",
    "ConfigError",
    "GroundStructure",
    "Mesh",
    "Problem",
    "RunConfig",
    "build_problem",
    "total_envelope_volume",
    "OuterLoop",
    "RunResult",
    "check_gradients",
    "run",
]

__version__ = "0.1.0"
