"""Quasi-static phase-field fracture with a primal-dual active-set Newton solver.

The package solves the coupled displacement / phase-field system on
hierarchically refined quadrilateral meshes.  Crack irreversibility is
enforced as a pointwise bound on the phase field and handled inside the
Newton loop through a primal-dual active-set strategy; the phase field
entering the displacement equation is linearized by time extrapolation
(optionally re-iterated to the monolithic limit).
"""

__version__ = "0.1.0"

from .mesh import Mesh, ConstraintSet, build_rectangle_mesh, build_lshape_mesh
from .material import MaterialParams, Assembler, degradation, extrapolate_phase

__all__ = [
    "Mesh",
    "ConstraintSet",
    "build_rectangle_mesh",
    "build_lshape_mesh",
]
