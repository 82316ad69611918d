"""Metric-aware r-adaptation of high-order simplicial meshes."""

from .distortion import (
    DistortionObjective,
    ObjectiveEval,
    element_quality,
    mesh_statistics,
    validity_guard,
)
from .mesh import HighOrderMesh, build_dof_map, generate_structured_mesh
from .metric import get_metric, identity_metric
from .solver import SolverConfig, SolverResult, minimize, optimize

__version__ = "0.1.0"

__all__ = [
    "DistortionObjective",
    "HighOrderMesh",
    "ObjectiveEval",
    "SolverConfig",
    "SolverResult",
    "build_dof_map",
    "element_quality",
    "generate_structured_mesh",
    "get_metric",
    "identity_metric",
    "mesh_statistics",
    "minimize",
    "optimize",
    "validity_guard",
]
