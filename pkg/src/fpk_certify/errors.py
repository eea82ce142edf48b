"""Exception hierarchy shared by all modules."""


class FPKError(Exception):
    """Base class; `exit_code` is what the CLI returns when it escapes."""

    exit_code = 3


class EvaluationError(FPKError):
    def __init__(self, message, point=None):
        super().__init__(message if point is None else f"{message} at {point}")
        self.point = point


class DomainError(FPKError):
    pass


class SingularPointError(EvaluationError):
    pass


class QuadratureError(FPKError):
    pass


class DivergenceError(FPKError):
    pass


class RangeError(FPKError):
    def __init__(self, message, sup_t=None):
        super().__init__(message)
        self.sup_t = sup_t


class OverflowBoundError(FPKError):
    pass


class ParameterError(FPKError):
    exit_code = 2


class PreconditionError(FPKError):
    exit_code = 2


class CFLError(FPKError):
    pass


class PositivityError(FPKError):
    pass


class TruncationError(FPKError):
    pass


class SupportError(FPKError):
    pass


class ExpressionSyntaxError(FPKError):
    exit_code = 2

    def __init__(self, message, position, source=""):
        super().__init__(f"{message} (column {position + 1})")
        self.position = position
        self.source = source


class SpecError(FPKError):
    """Problem-spec rejection; carries every violation found, not just the first."""

    exit_code = 2

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))
