"""Exception types shared across the pipeline."""


class IftdError(Exception):
    """Base class for all pipeline errors."""


class FormatError(IftdError):
    """Input bytes/text do not match the declared file layout."""


class ValidationError(IftdError):
    """Input parsed but violates a documented invariant."""


class ConfigError(IftdError):
    """Bad configuration key or value."""


class DegenerateGeometryError(IftdError):
    """Point configuration too degenerate for a rigid fit."""
