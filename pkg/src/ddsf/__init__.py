"""Data-driven safety filter with sampled terminal safe sets."""
from .consets import BoxSet, Polytope, symmetric_box
from .datamat import (HankelPair, Trajectory, build_hankel, extended_state,
                      hankel_matrix, is_persistently_exciting, validate_assumptions)
from .filter import (AssumptionError, BackupTrajectory, FilterConfig, FilterInfeasible,
                     SafetyFilter, SolverFailure, expand_offline, run_closed_loop)
from .interior import InteriorPointSettings, solve_interior
from .plant import DelayedLtiPlant, PlantDims, benchmark_plant
from .qpcore import QpProblem, QpSolution, SolverSettings, solve
from .safeset import SampledSafeSet, hull_distance

__all__ = [
    "AssumptionError", "BackupTrajectory", "BoxSet", "DelayedLtiPlant", "FilterConfig",
    "FilterInfeasible", "HankelPair", "InteriorPointSettings", "PlantDims", "Polytope",
    "QpProblem", "QpSolution", "SafetyFilter", "SampledSafeSet", "SolverFailure",
    "SolverSettings", "Trajectory", "benchmark_plant", "build_hankel", "expand_offline",
    "extended_state", "hankel_matrix", "hull_distance", "is_persistently_exciting",
    "run_closed_loop", "solve", "solve_interior", "symmetric_box", "validate_assumptions",
]
