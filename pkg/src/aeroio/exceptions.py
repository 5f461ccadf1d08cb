"""Exception types raised across the package."""


class AeroIOError(Exception):
    """Base class for all package errors."""


class NoRealRoot(AeroIOError, ValueError):
    """The per-axis drag equation has no real velocity solution."""


class Degenerate(AeroIOError, ValueError):
    """Velocity is unobservable on an axis (all drag terms vanish)."""


class RankDeficient(AeroIOError, ValueError):
    """The identification design matrix is too poorly conditioned."""


class ThrustInfeasible(AeroIOError, ValueError):
    """The trajectory needs negative collective thrust."""


class DivergenceDetected(AeroIOError, FloatingPointError):
    """Training loss became non-finite."""


class InnovationGateRejected(AeroIOError):
    """A measurement failed the chi-square innovation gate."""

    def __init__(self, statistic, gate):
        super().__init__(f"innovation statistic {statistic:.3f} exceeds gate {gate:.3f}")
        self.statistic = statistic
        self.gate = gate


class MonotonicityViolation(AeroIOError, ValueError):
    """Timestamps in a log are not strictly increasing."""


class AlignmentFailure(AeroIOError, ValueError):
    """Too few estimated samples could be matched to ground truth."""


class ParseError(AeroIOError, ValueError):
    """A file could not be parsed."""
