"""Exception hierarchy shared by all modules."""


class FwlSynthError(Exception):
    """Base class for every error raised by this package."""


class DimensionMismatch(FwlSynthError, ValueError):
    pass


class NonFinite(FwlSynthError, ArithmeticError):
    def __init__(self, message, scaling_depth=None):
        super().__init__(message)
        self.scaling_depth = scaling_depth


class Overflow(FwlSynthError, ArithmeticError):
    """A value does not fit the fixed-point range of its format.

    ``step`` is filled in by simulators so callers can report where the
    word length ran out.
    """

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class DivisorTooSmall(FwlSynthError, ArithmeticError):
    pass


class SingularMatrix(FwlSynthError, ArithmeticError):
    pass


class UnstablePlant(FwlSynthError):
    pass


class RepeatedEigenvalues(FwlSynthError):
    pass


class CompletenessUnavailable(FwlSynthError):
    """No closure step was found; ``escaped_at`` is set when the enclosure
    left the bounding box first."""

    def __init__(self, message, escaped_at=None):
        super().__init__(message)
        self.escaped_at = escaped_at


class NoContractionCertificate(FwlSynthError):
    pass


class RefinementExhausted(FwlSynthError):
    def __init__(self, message, suspect=None):
        super().__init__(message)
        self.suspect = suspect


class Infeasible(FwlSynthError):
    pass


class ParseError(FwlSynthError, ValueError):
    pass


class ValidationError(FwlSynthError, ValueError):
    pass
