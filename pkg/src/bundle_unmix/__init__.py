"""Sparse hyperspectral unmixing with endmember bundles."""

from .bundles import BundleConfig, aeb_extract, vca
from .data import CubeShape, GroupStructure, load_groups, load_matrix, save_groups, save_matrix
from .metrics import EvalReport, evaluate, rmse_abundance, rmse_reconstruction, sam, sam_reconstruction
from .prox import PenaltySpec, project_simplex
from .solvers import SolverConfig, SolverDivergence, UnmixResult, fcls, solve_inter, solve_swag, unmix
from .synth import SceneConfig, SceneTruth, make_scene

__version__ = "0.1.0"

__all__ = [
    "BundleConfig",
    "CubeShape",
    "EvalReport",
    "GroupStructure",
    "PenaltySpec",
    "SceneConfig",
    "SceneTruth",
    "SolverConfig",
    "SolverDivergence",
    "UnmixResult",
    "aeb_extract",
    "evaluate",
    "fcls",
    "load_groups",
    "load_matrix",
    "make_scene",
    "project_simplex",
    "rmse_abundance",
    "rmse_reconstruction",
    "sam",
    "sam_reconstruction",
    "save_groups",
    "save_matrix",
    "solve_inter",
    "solve_swag",
    "unmix",
    "vca",
]
