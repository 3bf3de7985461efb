"""Exception hierarchy shared by every module.

Two broad families map onto the CLI exit-code contract: data/argument
problems (exit 1) and storage/format problems (exit 2).
"""


class SemprobeError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(SemprobeError):
    """Data violates a semantic or referential invariant (exit code 1)."""


class InputError(ValidationError):
    """An argument or precondition is out of range or inconsistent."""


class ShapeError(ValidationError):
    """Array dimensions do not match what an operation requires."""


class StorageError(SemprobeError):
    """An I/O operation failed (exit code 2)."""


class FormatError(SemprobeError):
    """A file exists but its bytes do not follow the declared format."""
