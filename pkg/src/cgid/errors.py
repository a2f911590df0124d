"""Exception types shared across the package."""


class CgidError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(CgidError):
    """Operands have incompatible dimensions."""


class ConfigurationError(CgidError):
    """A configuration value is invalid or infeasible."""


class ContractError(CgidError):
    """A caller violated an operation precondition."""


class IngestionError(CgidError):
    """A corpus file could not be parsed or fails its invariants."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ComparisonError(CgidError):
    """Reports passed to a comparison do not share a data source."""


class UndefinedMetricError(CgidError):
    """A metric is undefined for the given accuracy matrix."""


class InvariantViolation(CgidError):
    """A runtime invariant check failed during an experiment."""
