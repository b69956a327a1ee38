"""Exception hierarchy.

Two families matter to callers: configuration problems (bad parameters,
missing paths, illegal specs) and data problems (malformed files, empty
masks, missing dates).  The CLI maps them to distinct exit codes.
"""


class MeltbenchError(Exception):
    """Base class for all package errors."""


class ConfigError(MeltbenchError, ValueError):
    """Invalid parameters, specs or run configuration."""


class DataError(MeltbenchError):
    """Input data cannot support the requested computation."""


class RasterFormatError(DataError):
    """An MWBR file is malformed (magic, version, size)."""


class GridMismatchError(DataError):
    """Rasters combined pixelwise do not share a grid."""


class NoValidPixelsError(DataError):
    """A pooled metric has no valid pixels to average over."""

    def __init__(self, message="no valid pixels"):
        super().__init__(message)


class DateMismatchError(DataError):
    """Two series that must be aligned by date are not."""


class MissingWinterBaselineError(DataError):
    """No winter acquisitions are available to build a reference mean."""


class MissingInputError(DataError):
    """A daily input stream has no raster for a requested date."""


class CoverageError(DataError):
    """A tiling leaves output pixels uncovered."""
