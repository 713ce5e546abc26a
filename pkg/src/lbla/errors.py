"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operands have incompatible or malformed shapes."""


class ConfigError(ValueError):
    """A configuration value is invalid (bad kernel size, head count, ...)."""


class WeightFileError(Exception):
    """Base class for weight-file problems."""


class WeightVersionError(WeightFileError):
    """The file's format version is not one this code can read."""


class WeightTruncationError(WeightFileError):
    """The file ends before all indexed tensor data has been read."""


class WeightShapeIndexError(WeightFileError):
    """A tensor's shape disagrees with the header's config/index."""
