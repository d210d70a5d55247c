"""Numerical laboratory for Kirchhoff ground states and their perturbations."""

from .radial import (
    RadialGrid,
    RadialFunction,
    default_grid,
    integrate_radial,
    radial_laplacian,
    fit_tail,
)
from .ground_state import (
    KirchhoffParams,
    ClassicalProfile,
    KirchhoffGroundState,
    classify_shot,
    solve_classical,
    scaling_constant,
    build_ground_state,
    energy_constants,
)
from .potential import PotentialModel, constant_potential, power_well, holder_well
from .perturbed import Box3D, EpsilonFrame, Field3D, ReducedSolution

__all__ = [
    "RadialGrid",
    "RadialFunction",
    "default_grid",
    "integrate_radial",
    "radial_laplacian",
    "fit_tail",
    "KirchhoffParams",
    "ClassicalProfile",
    "KirchhoffGroundState",
    "classify_shot",
    "solve_classical",
    "scaling_constant",
    "build_ground_state",
    "energy_constants",
    "PotentialModel",
    "constant_potential",
    "power_well",
    "holder_well",
    "Box3D",
    "EpsilonFrame",
    "Field3D",
    "ReducedSolution",
]
