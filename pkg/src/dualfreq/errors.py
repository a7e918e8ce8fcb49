"""Exception hierarchy shared by every module of the package."""


class DualFreqError(Exception):
    """Base class for all package errors."""


class ShapeError(DualFreqError, ValueError):
    """Array extents do not satisfy an operation's contract."""


class ConfigError(DualFreqError, ValueError):
    """A configuration value is out of its valid range."""


class NumericError(DualFreqError, ArithmeticError):
    """Non-finite values were encountered."""


class StateError(DualFreqError, RuntimeError):
    """An operation was called in the wrong order (e.g. backward before forward)."""


class InvalidLabelError(DualFreqError, ValueError):
    """A class label is not 0 or 1."""


class DataLoadError(DualFreqError, OSError):
    """An input image or dataset directory could not be read."""


class CheckpointError(DualFreqError):
    """Base class for checkpoint loading failures."""


class BadMagicError(CheckpointError):
    """The file does not start with the expected magic/version bytes."""


class TruncatedFileError(CheckpointError):
    """The file ends before the data declared in its header."""


class ManifestError(CheckpointError):
    """The tensor manifest is malformed or disagrees with the architecture."""


class ConfigMismatchError(CheckpointError):
    """The stored model configuration differs from the expected one."""

    def __init__(self, field, stored, expected):
        self.field = field
        self.stored = stored
        self.expected = expected
        super().__init__(
            f"config mismatch on field {field!r}: checkpoint has {stored!r}, expected {expected!r}"
        )
