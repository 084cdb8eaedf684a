"""Exception types shared across the pipeline."""


class RiskGraphError(Exception):
    """Base class for every error raised by riskgraph."""


class ConfigError(RiskGraphError, ValueError):
    """Invalid configuration value, unknown key, or infeasible setting."""


class SchemaViolation(RiskGraphError, ValueError):
    """Input data does not conform to the declared column schema."""

    def __init__(self, message, row=None, column=None):
        self.row = row
        self.column = column
        where = []
        if column is not None:
            where.append(f"column={column!r}")
        if row is not None:
            where.append(f"row={row}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class DuplicateKey(RiskGraphError, ValueError):
    """An identifier value occurs more than once in a table."""


class ShapeError(RiskGraphError, ValueError):
    """Operand shapes are incompatible."""


class NonFiniteGradient(RiskGraphError, FloatingPointError):
    """A gradient contained NaN or inf; training cannot continue."""


class UndefinedMetric(RiskGraphError, ValueError):
    """A metric is undefined for the given labels (e.g. a single class)."""
