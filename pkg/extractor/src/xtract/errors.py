class ExtractError(Exception):
    """Base class for exporter failures."""


class CheckpointError(ExtractError):
    """A model checkpoint is not available locally.

    The message always carries download instructions; the exporter never
    substitutes a different model silently.
    """
