"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """A geometric or configuration precondition is violated."""


class SolverError(RuntimeError):
    """A linear or nonlinear solve failed."""


class StagnationError(SolverError):
    """The line search could not decrease the objective.

    Carries the last accepted iterate so callers can salvage diagnostics.
    """

    def __init__(self, message, iterate=None):
        super().__init__(message)
        self.iterate = iterate
