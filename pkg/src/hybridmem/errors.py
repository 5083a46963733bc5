"""Exception types raised across the package."""


class HybridMemError(Exception):
    """Base class for every error raised by this package."""


class ShapeMismatch(HybridMemError, ValueError):
    pass


class EmptyAxis(HybridMemError, ValueError):
    pass


class EmptyInput(HybridMemError, ValueError):
    pass


class NonFiniteValue(HybridMemError, ValueError):
    pass


class EmptyReferenceSet(HybridMemError, ValueError):
    pass


class GlobalTokenUndefined(HybridMemError, ValueError):
    """No memory node passed the foreground (or background) threshold."""


class MissingReferenceMask(HybridMemError, KeyError):
    pass


class FrameMismatch(HybridMemError, ValueError):
    pass


# file format errors
class FormatError(HybridMemError, OSError):
    pass


class BadMagic(FormatError):
    pass


class BadVersion(FormatError):
    pass


class TruncatedPayload(FormatError):
    pass


class UnsupportedFormat(FormatError):
    pass


class HeaderMismatch(FormatError):
    pass
