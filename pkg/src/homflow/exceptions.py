"""Exception hierarchy shared by the solvers, checks and CLI."""


class HomflowError(Exception):
    """Base class for all package errors."""


class ConfigurationError(HomflowError, ValueError):
    """Invalid parameters, step sizes or scenario files."""


class PreconditionError(HomflowError, ValueError):
    """A check was asked to run on inputs outside its hypotheses."""


class SolverError(HomflowError, RuntimeError):
    """An iterative solver stopped before reaching its tolerance."""

    def __init__(self, message, iterations=None, gap=None):
        super().__init__(message)
        self.iterations = iterations
        self.gap = gap


class NonConvergenceError(SolverError):
    """Time refinement did not settle within the allowed number of steps."""

    def __init__(self, message, n=None, distance=None):
        super().__init__(message, iterations=n)
        self.n = n
        self.distance = distance


class InvariantBreachError(HomflowError, AssertionError):
    """A declared property (e.g. a Lipschitz bound) was falsified by a witness."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness
