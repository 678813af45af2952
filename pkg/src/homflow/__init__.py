"""Zero-order homogeneous accretive flows: resolvents, semigroups and checked estimates."""

from .engine import (
    ForcingTerm,
    OperatorBackend,
    RefinePolicy,
    Trajectory,
    difference_quotient,
    evolve,
    evolve_forced,
    evolve_perturbed,
    fractional_backend,
    gronwall_constant,
    resolvent_iterate,
    tv_backend,
)
from .exceptions import (
    ConfigurationError,
    HomflowError,
    InvariantBreachError,
    NonConvergenceError,
    PreconditionError,
    SolverError,
)
from .grid import DEFAULT_TOL, Domain, GridFunction, ResolventTolerance, SolveInfo, TimeGrid

__all__ = [
    "ConfigurationError",
    "DEFAULT_TOL",
    "Domain",
    "ForcingTerm",
    "GridFunction",
    "HomflowError",
    "InvariantBreachError",
    "NonConvergenceError",
    "OperatorBackend",
    "PreconditionError",
    "RefinePolicy",
    "ResolventTolerance",
    "SolveInfo",
    "SolverError",
    "TimeGrid",
    "Trajectory",
    "difference_quotient",
    "evolve",
    "evolve_forced",
    "evolve_perturbed",
    "fractional_backend",
    "gronwall_constant",
    "resolvent_iterate",
    "tv_backend",
]
