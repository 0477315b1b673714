"""Exception types shared across the pipeline."""


class FlowForgeError(Exception):
    """Base class for every error raised deliberately by flowforge."""


class ConfigError(FlowForgeError, ValueError):
    """Invalid experiment, sampling, or model configuration."""


class DataError(FlowForgeError, ValueError):
    """Input data that violates a precondition (bad values, empty sets...)."""


class SchemaError(DataError):
    """Column layout does not match the expected schema."""

    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)
