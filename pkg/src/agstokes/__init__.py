"""Aggregated unfitted finite elements for the Stokes problem on Cartesian meshes."""

from .aggregation import AggregateMap, aggregate_cells, aggregate_statistics, assign_outer_vef_owners
from .assembly import FormParameters, ImproperSets, MixedSystem, apply_mean_constraint, assemble, identify_improper_sets
from .cutcell import CutDecomposition, QuadratureRule, boundary_rule, decompose, decompose_cut_cell, facet_rule, volume_rule
from .estimator import AgFEMStokes
from .geometry import CellClass, Classification, LevelSet, builtin_geometries, classify, reconstruct_interface
from .linalg import ConditionReport, estimate_condition_1norm, factorize, factorize_and_solve
from .mesh import BackgroundMesh, VefId, build_mesh, unit_box_mesh
from .problems import StokesProblem, manufactured_solution, patch_solution
from .spaces import ConstraintTable, DofHandler

__version__ = "0.1.0"

__all__ = [
    "AgFEMStokes",
    "AggregateMap",
    "BackgroundMesh",
    "CellClass",
    "Classification",
    "ConditionReport",
    "ConstraintTable",
    "CutDecomposition",
    "DofHandler",
    "FormParameters",
    "ImproperSets",
    "LevelSet",
    "MixedSystem",
    "QuadratureRule",
    "StokesProblem",
    "VefId",
    "aggregate_cells",
    "aggregate_statistics",
    "apply_mean_constraint",
    "assemble",
    "assign_outer_vef_owners",
    "boundary_rule",
    "build_mesh",
    "builtin_geometries",
    "classify",
    "decompose",
    "decompose_cut_cell",
    "estimate_condition_1norm",
    "facet_rule",
    "factorize",
    "factorize_and_solve",
    "identify_improper_sets",
    "manufactured_solution",
    "patch_solution",
    "reconstruct_interface",
    "unit_box_mesh",
    "volume_rule",
]
