"""Adapter exceptions; the CLI maps AdapterError to exit code 1."""


class AdapterError(Exception):
    """Base class for everything the adapter can refuse to do."""


class ConfigError(AdapterError):
    """Adapter configuration violates its invariants."""


class DecodeFailureError(AdapterError):
    """An input image could not be decoded."""


class EncoderFailureError(AdapterError):
    """Feature extraction failed or produced non-finite values."""


class SegmenterFailureError(AdapterError):
    """Instance segmentation failed."""


class EndpointUnavailableError(AdapterError):
    """The reasoning endpoint could not be reached."""


class UnparseableAfterRepairError(AdapterError):
    """The reasoning endpoint never produced a valid decomposition object."""
