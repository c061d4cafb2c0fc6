"""Exception hierarchy shared across the package."""


class ItlError(Exception):
    """Base class for all package-specific errors."""


class InvalidInputError(ItlError):
    """Input violates a precondition (shape, finiteness, symmetry)."""


class DomainError(ItlError):
    """Mathematically valid input outside the operation's domain
    (e.g. an indefinite matrix where positive definiteness is required)."""


class EmptyDataError(ItlError):
    """An operation that needs at least one data sample received none."""


class RankDeficientError(ItlError):
    """The data Gram matrix is singular where invertibility is required."""


class DegenerateError(ItlError):
    """A ratio or normalisation degenerated (zero denominator)."""


class SynthesisFailedError(ItlError):
    """Gain synthesis did not find a feasible certificate within budget."""


class MpcInfeasibleError(ItlError):
    """The per-step predictive control problem is infeasible.

    ``binding`` names the constraint class that could not be satisfied.
    """

    def __init__(self, message: str, binding: str = "unknown"):
        super().__init__(message)
        self.binding = binding


class TighteningInfeasibleError(ItlError):
    """Constraint tightening produced an empty state or input set."""


class ApproximationFailedError(ItlError):
    """An iterative set approximation hit its cap before converging."""
