from .problem import (FixedTrajectory, SeparationSet, TrajOptProblem, Weights, build_problem,
                      discrete_dynamics)
from .solver import (AugmentedLagrangianSolver, Infeasible, OptimizedTrajectory, SolverOptions,
                     TrajectorySolver, solve, violations)

__all__ = [
    "AugmentedLagrangianSolver", "FixedTrajectory", "Infeasible", "OptimizedTrajectory", "SeparationSet",
    "SolverOptions", "TrajOptProblem", "TrajectorySolver", "Weights", "build_problem", "discrete_dynamics",
    "solve", "violations",
]
