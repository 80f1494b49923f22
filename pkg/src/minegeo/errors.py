"""Exception types raised across the package."""


class MinegeoError(Exception):
    """Base class for all package errors."""


class GeoDomainError(MinegeoError, ValueError):
    """Coordinates outside the domain where a projection is defined."""


class BehindCameraError(MinegeoError, ValueError):
    """A point lies on or behind the image plane."""


class DegenerateConfigurationError(MinegeoError, ValueError):
    """Input geometry does not determine a unique solution."""


class ValidationError(MinegeoError, ValueError):
    """A record violates a documented invariant."""


class ZoneMismatchError(ValidationError):
    """Quantities expressed in different UTM zones were combined."""


class ParseError(MinegeoError, ValueError):
    """Malformed file content. Carries the file path and a location."""

    def __init__(self, path, message, *, line=None, offset=None):
        self.path = str(path)
        self.line = line
        self.offset = offset
        where = self.path
        if line is not None:
            where += f":{line}"
        if offset is not None:
            where += f" @byte {offset}"
        super().__init__(f"{where}: {message}")


class ConfigError(MinegeoError):
    """Missing or invalid pipeline configuration."""


class ProcessingError(MinegeoError):
    """A pipeline stage ran but could not produce a usable result."""
