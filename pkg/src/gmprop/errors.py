"""Exception hierarchy shared across the library.

The CLI maps these to distinct exit codes, so keep the split: configuration
problems (bad layer specs, unknown activations), data problems (unparseable
dataset files), numeric failures (non-finite moments), and sequencing misuse
(consuming a forward trace twice).
"""


class GmpropError(Exception):
    """Base class for all library errors."""


class ConfigError(GmpropError):
    """Invalid network/layer/run configuration."""


class DataError(GmpropError):
    """Dataset file is missing, truncated, or malformed."""


class NumericError(GmpropError):
    """Moments became non-finite or otherwise unusable."""


class SequencingError(GmpropError):
    """Operations called in an unsupported order (e.g. reused forward trace)."""
