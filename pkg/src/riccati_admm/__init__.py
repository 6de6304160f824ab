"""Convex MPC by ADMM with a cached infinite-horizon Riccati primal update."""
from .cache import (NonConvergence, RhoCacheEntry, SolverCache, build_cache, build_entry,
                    riccati_infinite_horizon)
from .problem import (ConstraintSet, CostSpec, HalfSpace, LtiModel, MpcProblem,
                      controllability_rank, eval_objective, load_problem, problem_size, validate)
from .solver import Settings, Solution, SolverFault, Status, solve

__all__ = [
    "ConstraintSet", "CostSpec", "HalfSpace", "LtiModel", "MpcProblem", "NonConvergence",
    "RhoCacheEntry", "Settings", "Solution", "SolverCache", "SolverFault", "Status",
    "build_cache", "build_entry", "controllability_rank", "eval_objective", "load_problem",
    "problem_size", "riccati_infinite_horizon", "solve", "validate",
]
