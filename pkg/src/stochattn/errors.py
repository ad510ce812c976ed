"""Exception types shared across the package."""


class StochAttnError(Exception):
    """Base class for all package errors."""


class DimensionError(StochAttnError):
    """Operand shapes are incompatible with the requested operation."""


class DomainError(StochAttnError):
    """A numeric argument lies outside the operation's domain."""


class DegenerateRowError(StochAttnError):
    """An attention row has no unmasked entries to normalize over."""


class ParameterError(StochAttnError):
    """A hyperparameter value is invalid (e.g. dropout probability >= 1)."""


class ConfigError(StochAttnError):
    """An experiment configuration is malformed or inconsistent."""


class IntegrityError(StochAttnError):
    """A dataset file does not match its recorded checksum."""


class DataValidationError(StochAttnError):
    """Loaded dataset statistics disagree with the declared reference values."""


class ParseError(StochAttnError):
    """A data file could not be parsed; carries the offending line number."""

    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no
        self.message = message


class DivergenceError(StochAttnError):
    """Training produced non-finite gradients; aborted with diagnostics."""


class MetricError(StochAttnError):
    """A metric is undefined for the given inputs (e.g. empty instance set)."""
