"""Exception types raised across the package."""


class ParseError(ValueError):
    """Malformed network or history text.

    ``line`` and ``column`` are 1-based; either may be ``None`` when the
    problem is not tied to a position (e.g. an empty file).
    """

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        self.message = message
        if line is None:
            text = message
        elif column is None:
            text = f"line {line}: {message}"
        else:
            text = f"line {line}, column {column}: {message}"
        super().__init__(text)


class IntegrationError(RuntimeError):
    """The integrator produced a state it cannot accept (negative or non-finite)."""

    def __init__(self, message, t=None, state=None):
        self.t = t
        self.state = state
        super().__init__(message)


class ConvergenceError(RuntimeError):
    """A Newton iteration did not converge. Carries the last iterate."""

    def __init__(self, message, last_iterate=None, residual=None):
        self.last_iterate = last_iterate
        self.residual = residual
        super().__init__(message)


class NotComplexBalancedError(ValueError):
    """A point passed as a complex balanced equilibrium is not one."""
