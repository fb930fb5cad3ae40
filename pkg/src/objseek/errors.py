"""Exception types shared across the package."""


class ObjseekError(Exception):
    """Base class for all objseek errors."""


class ParseError(ObjseekError):
    """A dataset document could not be parsed at all."""


class SchemaError(ObjseekError):
    """A parsed document violates the dataset schema; names the offender."""


class InvalidConfig(ObjseekError):
    """Contradictory or out-of-range configuration values."""


class DimensionMismatch(ObjseekError):
    """Vector/matrix dimensions do not line up."""


class DegenerateImage(ObjseekError):
    """An image whose mean region feature is the zero vector."""


class EmptyQuerySet(ObjseekError):
    """An operation that requires at least one query got none."""


class UnknownTarget(ObjseekError):
    """A referenced image id does not exist in the gallery."""


class IndexOutOfRange(ObjseekError):
    """An object index is outside the vocabulary."""


class AllExcluded(ObjseekError):
    """No unasked object is left to propose."""


class ShapeMismatch(ObjseekError):
    """Array arguments have inconsistent shapes."""


class CacheMismatch(ObjseekError):
    """A backward pass got a cache or gradient that does not match."""


class NonFiniteParameters(ObjseekError):
    """Network parameters contain NaN or infinity."""


class InsufficientData(ObjseekError):
    """Not enough collected rounds to run an update."""


class NonFiniteLoss(ObjseekError):
    """A loss term became NaN or infinite; the update is aborted."""


class EmptyEpisode(ObjseekError):
    """Advantage estimation over an empty episode."""


class EmptyInput(ObjseekError):
    """A metric over an empty rank list."""
