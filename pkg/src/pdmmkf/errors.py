"""Exception hierarchy shared by all modules.

The CLI maps each family onto its own exit code, so callers that only
care about "bad input" can catch :class:`ValidationError`.
"""


class PdmmError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(PdmmError, ValueError):
    """Input data violates a structural or numerical invariant."""


class GraphError(ValidationError):
    pass


class DimensionError(ValidationError):
    pass


class SingularSystemError(ValidationError):
    """A matrix that has to be inverted is (numerically) singular."""


class AssumptionError(ValidationError):
    """A weighting matrix is not symmetric positive definite."""


class ScheduleError(ValidationError):
    """The requested update schedule does not fit the graph shape."""


class NoSaddlePointError(PdmmError):
    """The KKT system has no solution (unbounded or infeasible problem)."""


class InfeasibleError(NoSaddlePointError):
    """The edge constraints admit no common solution."""
