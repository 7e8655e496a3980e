"""Exception types shared across the package."""


class NdcbError(Exception):
    """Base class for all package-specific errors."""


class ConfigurationError(NdcbError, ValueError):
    """Incompatible shapes, invalid hyperparameters, or bad flag combinations."""


class DegenerateInputError(NdcbError, ValueError):
    """Input outside the documented domain, e.g. a near-zero vector fed to l2_normalize."""


class DatasetError(NdcbError, ValueError):
    """Dataset cannot support the requested operation (too few classes, empty pool, ...)."""


class UndefinedMetricError(NdcbError, ZeroDivisionError):
    """A confusion-matrix metric has a zero denominator; the message names the metric."""


class FileFormatError(NdcbError, ValueError):
    """Base for on-disk format violations."""


class BadMagicError(FileFormatError):
    """File does not start with the expected magic number."""


class TruncatedFileError(FileFormatError):
    """File ends before the declared payload."""


class CountMismatchError(FileFormatError):
    """Image and label files declare different item counts."""
