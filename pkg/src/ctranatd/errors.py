"""Exception hierarchy shared across the package."""

from __future__ import annotations


class CTranATDError(Exception):
    """Base class; ``category`` is the machine-parseable tag the CLI prints."""

    category = "error"


class DimensionError(CTranATDError, ValueError):
    category = "dimension"

    def __init__(self, message: str, axis: str | None = None):
        self.axis = axis
        if axis is not None:
            message = f"{message} (axis: {axis})"
        super().__init__(message)


class InvalidWindowError(DimensionError):
    category = "invalid-window"


class EmptyInputError(CTranATDError, ValueError):
    category = "empty-input"


class ConfigurationError(CTranATDError, ValueError):
    category = "configuration"


class NonFiniteError(CTranATDError, FloatingPointError):
    category = "non-finite"


class SchemaError(CTranATDError, ValueError):
    category = "schema"

    def __init__(self, message: str, column: str | None = None):
        self.column = column
        super().__init__(message)


class EncodingError(CTranATDError, ValueError):
    category = "encoding"


class FitError(CTranATDError, ValueError):
    category = "fit"


class EmptyDatasetError(CTranATDError, ValueError):
    category = "empty-dataset"


class UndefinedMetricError(CTranATDError, ValueError):
    category = "undefined-metric"


class ProtocolError(CTranATDError):
    category = "protocol"
