"""Exception hierarchy shared by all modules."""


class FormReflectError(Exception):
    """Base class for every error raised by the package."""


class DomainError(FormReflectError, ValueError):
    """A point, index or degree lies outside its admissible range."""


class ParseError(FormReflectError, ValueError):
    def __init__(self, message, position):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class EvaluationError(FormReflectError, ArithmeticError):
    """Division by zero or a non-real intermediate during evaluation."""


class NotExactError(FormReflectError):
    """Exact rational evaluation met a transcendental value."""


class MetricDegeneracyError(FormReflectError):
    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class StencilError(FormReflectError):
    """A finite-difference stencil leaves the domain."""

    def __init__(self, message, side):
        super().__init__(message)
        self.side = side


class ReflectionRefused(FormReflectError):
    """Reflection precondition failed; ``stage`` names the failing check."""

    stage = "reflection"

    def __init__(self, message, worst_point=None, worst_error=None, detail=None):
        super().__init__(message)
        self.worst_point = worst_point
        self.worst_error = worst_error
        self.detail = detail


class ChartNotAdaptedError(ReflectionRefused):
    stage = "adaptation"


class TraceMismatchError(ReflectionRefused):
    stage = "trace-matching"


class ShrinkRadiusError(FormReflectError):
    def __init__(self, message, suggested_radius):
        super().__init__(message)
        self.suggested_radius = suggested_radius
