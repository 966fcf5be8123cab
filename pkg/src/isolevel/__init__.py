"""Tool-path planning on triangle meshes from an optimised scalar field.

The iso-level curves of ``phi`` are the tool paths; ``phi`` is solved so its
level spacing gives a constant scallop height (optionally traded against
path smoothness).
"""

__version__ = "0.1.0"

from .config import ConfigError, PlannerConfig  # noqa: E402
from .field import ScalarField  # noqa: E402
from .mesh import MeshError, MeshLocation, TriMesh, load_mesh  # noqa: E402
from .optimize import BoundaryCondition, SolveReport, SolverError, solve, solve_laplacian_baseline  # noqa: E402
from .isocurve import IsoCurve, extract, verify_topology  # noqa: E402
from .pipeline import LevelSchedule, ToolPath, schedule_adaptive, schedule_iso_scallop, simplify  # noqa: E402
from .estimator import IsoLevelPlanner, LaplacianPlanner  # noqa: E402

__all__ = [
    "BoundaryCondition",
    "ConfigError",
    "IsoCurve",
    "IsoLevelPlanner",
    "LaplacianPlanner",
    "LevelSchedule",
    "MeshError",
    "MeshLocation",
    "PlannerConfig",
    "ScalarField",
    "SolveReport",
    "SolverError",
    "ToolPath",
    "TriMesh",
    "extract",
    "load_mesh",
    "schedule_adaptive",
    "schedule_iso_scallop",
    "simplify",
    "solve",
    "solve_laplacian_baseline",
    "verify_topology",
]
