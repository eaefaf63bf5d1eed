"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Shapes or indices are inconsistent with an operation."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values or failed to converge."""


class ConfigError(ValueError):
    """A configuration value is invalid or inconsistent."""


class ImageFormatError(ValueError):
    """A PGM/PPM file is malformed or uses an unsupported variant."""


class CheckpointError(IOError):
    """Base class for checkpoint decoding failures."""


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedFileError(CheckpointError):
    pass
