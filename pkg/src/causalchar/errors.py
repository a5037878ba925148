"""Exception hierarchy shared by all solver modules."""


class SolverError(Exception):
    """Base class for every error raised by causalchar."""


class DomainMembershipError(SolverError):
    pass


class StopSetProximityError(SolverError):
    pass


class TimeFunctionInvalidError(SolverError):
    pass


class CausalityViolationError(SolverError):
    pass


class IntegrationFailureError(SolverError):
    pass


class GeometryInconsistencyError(SolverError):
    pass


class CharacteristicCrossingError(SolverError):
    pass


class InvalidBoundsError(SolverError, ValueError):
    pass


class DegeneratePairError(SolverError, ValueError):
    pass


class ContractionFailureError(SolverError):
    """A stripe did not reach the update tolerance; ``ratio`` is the last measured contraction ratio."""

    def __init__(self, message, ratio=float("nan"), stripe=None):
        super().__init__(message)
        self.ratio = ratio
        self.stripe = stripe


class MaskInvalidError(SolverError, ValueError):
    pass


class FormatError(SolverError, ValueError):
    """Malformed binary input; ``offset`` is the byte offset where parsing failed."""

    def __init__(self, message, offset=None):
        super().__init__(message)
        self.offset = offset
