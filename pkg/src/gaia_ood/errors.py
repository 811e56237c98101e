"""Exception taxonomy shared across the library and the CLI exit codes."""


class GaiaError(Exception):
    """Base class for all library errors."""


class ConfigurationError(GaiaError):
    """Invalid graph, shapes, flags, or scorer configuration (CLI exit 2)."""


class DataError(GaiaError):
    """Bad file contents or non-finite/ill-formed values (CLI exit 3)."""


class UsageError(GaiaError):
    """API misuse, e.g. reusing a consumed tape or empty score sets."""
