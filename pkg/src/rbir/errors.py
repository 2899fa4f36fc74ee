"""Shared exception types. The HTTP layer maps these onto wire error codes."""


class RbirError(Exception):
    """Base class for all errors raised by this package."""

    code = "internal"


class InvalidArityError(RbirError):
    code = "invalid_request"


class ArityMismatchError(RbirError):
    code = "invalid_request"


class DimensionMismatchError(RbirError):
    code = "dimension_mismatch"


class NotFoundError(RbirError):
    code = "not_found"


class OovError(RbirError):
    """A word is missing from the embedding table."""

    code = "oov"

    def __init__(self, word):
        super().__init__(f"out-of-vocabulary word: {word!r}")
        self.word = word


class InsufficientDataError(RbirError):
    code = "insufficient_data"


class FormatError(RbirError):
    """Bad magic, version, digest, or malformed record in a persisted file."""

    code = "io"


class GenerationError(RbirError):
    """The synthetic generator could not satisfy a scene template."""

    code = "invalid_request"
