"""Exception hierarchy for the fusion engine.

``EngineError`` covers everything a caller can trigger with bad inputs or
bad files; the CLI maps it to exit code 1.  Anything else escaping is an
internal error (exit code 2).
"""


class EngineError(Exception):
    """Base class for all validation and format errors raised by this package."""


class DimMismatchError(EngineError):
    """Vectors participating in one operation do not share a dimension."""


class ZeroVectorError(EngineError):
    """A vector with zero norm was passed where a direction is required."""


class EmptyInputError(EngineError):
    """An operation that needs at least one element received none."""


class EmptyInstanceSetError(EngineError):
    """An instance-level operation was asked to weight an empty instance set."""


class ArityMismatchError(EngineError):
    """A combiner received a number of inputs different from its arity."""


class StaleCacheError(EngineError):
    """A backward pass was given a cache whose shapes do not match the parameters."""


class NonPositiveTauError(EngineError):
    """The contrastive temperature must be strictly positive."""


class ShapeMismatchError(EngineError):
    """Parameter, gradient, and optimizer-state shapes disagree."""


class EmptyDatasetError(EngineError):
    """Training or evaluation was requested on an empty sample list."""


class MissingTargetError(EngineError):
    """A sample's target id does not resolve to any gallery entry."""


class EmptyGalleryError(EngineError):
    """Ranking was requested against an empty gallery."""


class MissingTruthError(EngineError):
    """A ranked result has no ground-truth target id."""


class ConfigError(EngineError):
    """A run configuration or ablation variant violates its invariants."""


class NonFiniteValueError(EngineError):
    """A tensor or vector contains NaN or infinity."""


class FormatError(EngineError):
    """Base class for on-disk format violations."""


class BadMagicError(FormatError):
    """A binary file does not start with the expected magic bytes."""


class UnsupportedVersionError(FormatError):
    """A binary file declares a version or dtype code this reader does not know."""


class TruncatedFileError(FormatError):
    """A binary file ended before its declared payload."""


class DanglingPathError(FormatError):
    """A manifest references a file that does not exist."""


class DuplicateIdError(FormatError):
    """Sample or gallery ids collide within their scope."""


class UnresolvedTargetError(FormatError):
    """A manifest sample names a target id absent from the gallery."""


class IoFailureError(EngineError):
    """A filesystem write could not be completed."""
