"""Exception types raised by the toolkit."""


class OscithinError(Exception):
    """Base class for all toolkit errors."""


class DomainError(OscithinError, ValueError):
    """A coordinate or parameter lies outside its admissible range."""


class ConfigError(OscithinError, ValueError):
    """Invalid or incomplete configuration."""


class MeshBudgetError(OscithinError):
    """Requested mesh would exceed the configured node budget (eps too small)."""

    def __init__(self, estimated, budget):
        self.estimated = int(estimated)
        self.budget = int(budget)
        super().__init__(
            f"estimated {self.estimated} nodes exceeds budget {self.budget}; "
            "eps too small for budget"
        )


class AssemblyError(OscithinError):
    pass


class ConstraintError(OscithinError):
    pass


class CompatibilityError(OscithinError):
    """Right-hand side of a singular Neumann problem is not orthogonal to constants."""


class ConvergenceError(OscithinError):
    """Iterative method stopped before reaching its tolerance."""

    def __init__(self, message, residual=None):
        self.residual = residual
        super().__init__(message)


class ConsistencyError(OscithinError):
    """Two independent evaluations of the same quantity disagree."""


class StudyError(OscithinError):
    pass
