"""Exception types shared across the package."""


class FlipsenseError(Exception):
    """Base class for all errors raised by this package."""


class HistoryParseError(FlipsenseError):
    """A history line could not be parsed; carries the 1-based line number."""

    def __init__(self, line_no: int, message: str):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}")


class ValidationError(FlipsenseError):
    """Input data violates a structural constraint (duplicates, empty history, ...)."""


class ConfigError(FlipsenseError):
    """Mutually inconsistent configuration, e.g. mixing d-modes between matrices."""


class UndefinedMetricError(FlipsenseError):
    """A metric was requested for an input on which it is undefined."""
