"""Typed errors raised across the package.

The class names double as the error names the CLI prints on stderr, so
they intentionally mirror the domain vocabulary rather than PEP 8's
``*Error`` suffix convention.
"""


class SepSearchError(Exception):
    """Base class for every domain error."""


class BadMagic(SepSearchError):
    pass


class CorruptHeader(SepSearchError):
    pass


class NonFiniteValue(SepSearchError):
    pass


class DuplicateId(SepSearchError):
    pass


class IoFailure(SepSearchError):
    pass


class ParseError(SepSearchError):
    pass


class DuplicatePair(SepSearchError):
    pass


class UnknownId(SepSearchError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class DimMismatch(SepSearchError, ValueError):
    pass


class BadShape(SepSearchError, ValueError):
    pass


class NonFinite(SepSearchError, FloatingPointError):
    pass


class ShapeMismatch(SepSearchError):
    pass


class NoPositives(SepSearchError):
    pass


class DivergedLoss(SepSearchError):
    pass


class BadParams(SepSearchError, ValueError):
    pass


class NoRelevant(SepSearchError):
    pass


class EmptyRun(SepSearchError):
    pass


class BadSpec(SepSearchError, ValueError):
    pass


class UsageError(SepSearchError):
    pass
