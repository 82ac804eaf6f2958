"""Certifiably optimal risk scores trained by lattice cutting planes."""

from importlib.metadata import PackageNotFoundError, version as _version

try:
    __version__ = _version("artifact")
except PackageNotFoundError:  # pragma: no cover
    __version__ = "0.0.0"

from .dataset import Dataset, load_bundled, load_csv, split_folds
from .lcpa import SolverOptions, SolveResult, chained_updates, cpa_solve, initialize, lcpa_solve
from .problem import CoefficientSet, ProblemSpec, is_feasible, objective_value

__all__ = [
    "CoefficientSet", "Dataset", "ProblemSpec", "SolveResult", "SolverOptions", "chained_updates",
    "cpa_solve", "initialize", "is_feasible", "lcpa_solve", "load_bundled", "load_csv",
    "objective_value", "split_folds",
]
