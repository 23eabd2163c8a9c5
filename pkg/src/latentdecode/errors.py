"""Exception hierarchy.

Errors are grouped by what went wrong so the command-line front end can map
them onto exit codes: configuration problems (2), bad or missing data (3)
and numerical failures (4).
"""


class LatentDecodeError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 1


class ConfigError(LatentDecodeError):
    exit_code = 2


class DataError(LatentDecodeError):
    exit_code = 3


class NumericError(LatentDecodeError, ArithmeticError):
    exit_code = 4


# -- data errors -------------------------------------------------------------

class MissingFile(DataError, FileNotFoundError):
    pass


class BadMagic(DataError):
    pass


class ShapeMismatch(DataError, ValueError):
    pass


class NonFiniteValue(DataError, ValueError):
    pass


class IndexOutOfRange(DataError, IndexError):
    pass


class UnknownFormat(DataError):
    pass


class EmptyInput(DataError, ValueError):
    pass


class EmptyMask(DataError, ValueError):
    pass


class TooFewSamples(DataError, ValueError):
    pass


class TooFewItems(DataError, ValueError):
    pass


class ImageTooSmall(DataError, ValueError):
    pass


class UpstreamMissing(DataError):
    pass


class IoFailure(DataError, OSError):
    pass


# -- numeric errors ----------------------------------------------------------

class SingularDesign(NumericError):
    pass


class DegenerateCovariance(NumericError):
    pass


class NonFiniteFitness(NumericError, ValueError):
    pass


class NonFiniteGradient(NumericError, ValueError):
    pass


class LengthMismatch(NumericError, ValueError):
    pass


class ZeroVariance(NumericError, ValueError):
    pass


class ZeroNorm(NumericError, ValueError):
    pass


class ZeroNormInstance(ZeroNorm):
    pass


class GradientUnavailable(NumericError):
    pass


class Unsupported(LatentDecodeError, NotImplementedError):
    """Raised by an oracle that declines an optional operation (e.g. VJP)."""
