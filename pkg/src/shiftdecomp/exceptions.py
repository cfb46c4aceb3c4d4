"""Exception hierarchy. The CLI maps each class to an exit code."""


class ShiftDecompError(Exception):
    """Base class for all package errors."""


class SchemaError(ShiftDecompError, ValueError):
    """Malformed input: missing columns, unparseable cells, bad dimensions."""


class EstimationError(ShiftDecompError):
    """The data cannot support the requested estimate (e.g. empty shared support)."""


class UnsupportedMethodError(EstimationError):
    """A standard-error method was requested for a scheme it does not cover."""


class InvariantError(ShiftDecompError, AssertionError):
    """An internal identity that must hold by construction was violated."""
