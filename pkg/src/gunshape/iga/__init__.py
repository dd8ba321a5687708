"""Isogeometric electrostatic solver for axisymmetric multipatch models."""
from .fields import (FieldMax, FieldmapData, FieldmapGrid, boundary_profile, export_fieldmap,
                     field_at_points, max_field, read_fieldmap, sample_fieldmap,
                     triple_point_term, write_fieldmap, write_profile_csv)
from .models import parallel_plate_model, sphere_field, sphere_potential, spherical_capacitor_model
from .solver import (FieldSolution, LinearSystem, QuadCache, SolverError, assemble, eval_field,
                     eval_potential, solve, solve_model, stiffness)
from .space import SpaceError, SplineSpace, build_space, patch_quadrature, tensor_basis

__all__ = [
    "FieldMax", "FieldSolution", "FieldmapData", "FieldmapGrid", "LinearSystem", "QuadCache",
    "SolverError", "SpaceError", "SplineSpace", "assemble", "boundary_profile", "build_space",
    "eval_field", "eval_potential", "export_fieldmap", "field_at_points", "max_field",
    "parallel_plate_model", "patch_quadrature", "read_fieldmap", "sample_fieldmap", "solve",
    "solve_model", "sphere_field", "sphere_potential", "spherical_capacitor_model", "stiffness",
    "tensor_basis", "triple_point_term", "write_fieldmap", "write_profile_csv",
]
