"""Exception hierarchy shared by all modules."""


class OtfsRadarError(Exception):
    """Base class for every error raised by the toolkit."""


class InvalidConfig(OtfsRadarError, ValueError):
    """Raised with the full list of violated invariants."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class UnsupportedConstellation(OtfsRadarError, ValueError):
    pass


class LengthMismatch(OtfsRadarError, ValueError):
    pass


class AngleOutOfRange(OtfsRadarError, ValueError):
    pass


class DelayOutOfFrame(OtfsRadarError, ValueError):
    pass


class FormatError(OtfsRadarError, ValueError):
    """Bad magic bytes or truncated payload in a binary dump."""


class EstimationError(OtfsRadarError):
    """Base class for failures inside an estimator (counted by the harness)."""


class EigenFailure(EstimationError):
    pass


class SubspaceDegenerate(EstimationError):
    pass


class RootFindingFailure(EstimationError):
    pass


class InsufficientRoots(EstimationError):
    pass


class SingularSystem(EstimationError):
    pass


class SingularFisher(EstimationError):
    """Fisher matrix not invertible; ``null_direction`` holds the offending eigenvector."""

    def __init__(self, message, null_direction=None):
        super().__init__(message)
        self.null_direction = null_direction


class StepUnderflow(OtfsRadarError, ArithmeticError):
    pass
