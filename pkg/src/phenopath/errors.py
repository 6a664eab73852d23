"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """An argument violates a documented precondition."""


class NumericalError(ArithmeticError):
    """A matrix factorization failed even after the jitter schedule."""

    def __init__(self, message, jitters=()):
        self.jitters = tuple(jitters)
        if self.jitters:
            tried = ", ".join(f"{j:.3e}" for j in self.jitters)
            message = f"{message} (jitter tried: {tried})"
        super().__init__(message)


class ParseError(ValueError):
    """Malformed grid or dataset input; carries the offending location."""

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column}")
        if where:
            message = f"{', '.join(where)}: {message}"
        super().__init__(message)


class PlanningError(RuntimeError):
    """No admissible path exists for the requested waypoints."""


class ResourceLimitError(PlanningError):
    """Path enumeration exceeded its state budget."""


class RouteExhausted(Exception):
    """The fixed coverage route has no legs left."""
