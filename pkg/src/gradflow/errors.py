"""Exception hierarchy shared by all gradflow modules."""


class GradflowError(Exception):
    """Base class for every error raised by this package."""


class DimensionMismatch(GradflowError, ValueError):
    pass


class SizeExceeded(GradflowError, ValueError):
    pass


class Infeasible(GradflowError):
    pass


class VariantMismatch(GradflowError, ValueError):
    pass


class LayoutMismatch(GradflowError, ValueError):
    pass


class BasisEvaluationError(GradflowError, ValueError):
    pass


class DomainError(GradflowError, ValueError):
    pass


class NonFiniteState(GradflowError, ArithmeticError):
    pass


class WindowTooLarge(GradflowError, ValueError):
    pass


class DegenerateTimes(GradflowError, ValueError):
    pass


class DegenerateSplit(GradflowError, ValueError):
    pass


class DegenerateTruth(GradflowError, ValueError):
    pass


class SolverFailure(GradflowError, RuntimeError):
    """Raised when a fit needs a certified solution and the solver did not deliver one."""

    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


class ParseError(GradflowError, ValueError):
    """Malformed input file; carries the 1-based line and column when known."""

    def __init__(self, message, line=None, column=None):
        loc = ""
        if line is not None:
            loc = f" (line {line}" + (f", column {column}" if column is not None else "") + ")"
        super().__init__(message + loc)
        self.line = line
        self.column = column


class SchemaError(GradflowError, ValueError):
    pass
