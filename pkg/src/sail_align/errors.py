"""Exception hierarchy shared across the package."""


class SailAlignError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(SailAlignError):
    """Data violates a declared invariant (non-finite values, bad labels, ...)."""


class ShapeError(SailAlignError):
    """Array shapes are inconsistent with the requested operation."""


class ConfigError(SailAlignError):
    """A configuration value is out of its legal range or internally inconsistent."""


class FormatError(SailAlignError):
    """A file does not conform to the expected on-disk format."""


class TruncatedFileError(FormatError):
    """File ended before the declared payload was complete."""


class ChecksumError(FormatError):
    """Stored and recomputed CRC32 disagree."""

    def __init__(self, expected: int, actual: int, path: str = ""):
        self.expected = expected
        self.actual = actual
        suffix = f" in {path}" if path else ""
        super().__init__(
            f"CRC32 mismatch{suffix}: expected {expected:#010x}, actual {actual:#010x}"
        )
