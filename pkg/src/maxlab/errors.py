"""Exception hierarchy.

Two families matter to the command line: :class:`GridFormatError` (and
``OSError``) map to exit code 2, :class:`PreconditionError` maps to exit
code 3.
"""


class MaxlabError(Exception):
    """Base class for all library errors."""


class GridFormatError(MaxlabError):
    """A grid file could not be decoded."""


class MalformedHeaderError(GridFormatError):
    pass


class TruncatedPayloadError(GridFormatError):
    pass


class DimensionOverflowError(GridFormatError):
    pass


class PreconditionError(MaxlabError, ValueError):
    """An operation was called outside its documented domain."""


class SupportOverflowError(PreconditionError):
    pass


class EmptyStencilError(PreconditionError):
    pass


class InsufficientRadiusGridError(PreconditionError):
    pass


class InvalidAlphaError(PreconditionError):
    pass


class DomainTooSmallError(PreconditionError):
    pass


class InvalidExponentError(PreconditionError):
    pass


class ZeroGradientError(PreconditionError):
    pass


class DeltaZeroError(PreconditionError):
    pass


class MarginOverflowError(PreconditionError):
    pass


class NoQualifyingBallError(PreconditionError):
    pass


class BoxTooSmallError(PreconditionError):
    pass


class UnsupportedCaseError(PreconditionError):
    pass


class MissingGoodBallError(MaxlabError):
    """A maximal field lacks the good-ball records an operation needs."""
