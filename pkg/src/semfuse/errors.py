"""Exception types shared across the pipeline."""


class ConfigError(Exception):
    """Bad configuration value or unusable combination of options (CLI exit 2)."""


class DataError(Exception):
    """Missing or malformed input data: scenes, frames, images (CLI exit 3)."""


class FormatError(DataError):
    """A serialized artifact (volume file, RLE, exchange JSON) violates its format."""


class TransportError(Exception):
    """Mask exchange failed: timeout, or a response file that cannot be trusted.

    Distinct from a prompt simply being unanswered, which is a valid response.
    """
