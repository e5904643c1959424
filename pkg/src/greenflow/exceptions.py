"""Shared exception bases.

Concrete errors live next to the code that raises them; these bases exist
so the CLI can map whole error families onto exit codes.
"""


class GreenflowError(Exception):
    """Base class for all errors raised by this package."""


class DataError(GreenflowError):
    """Malformed or inconsistent input data (captures, labels, datasets, models)."""


class ConfigError(GreenflowError):
    """Invalid run configuration."""
