"""Exception hierarchy shared by every stage of the pipeline."""


class BovwError(Exception):
    """Base class for all errors raised by this package."""


class InsufficientDataError(BovwError):
    """Too few samples to fit the requested model."""


class DegenerateDataError(BovwError):
    """Input has no usable variance (e.g. every row identical)."""


class ShapeError(BovwError, ValueError):
    """Vector or matrix dimensions do not match the model."""


class ConfigurationError(BovwError, ValueError):
    """Illegal parameter combination, missing model, or bad config file."""


class AlignmentError(BovwError, ValueError):
    """Descriptor channels disagree on cuboid count."""


class EmptyVideoError(BovwError):
    """A video contributed no descriptors to pool."""


class FormatError(BovwError):
    """A persisted file is truncated, corrupted, or has the wrong magic."""


class ManifestError(BovwError):
    """Manifest rows are missing or inconsistent."""
