"""Exception types shared across the package."""


class MTLabError(Exception):
    """Base class for every error raised by this package."""


class FormatError(MTLabError):
    """A file or config value does not follow its documented format."""


class EmptyCorpusError(MTLabError):
    """A load produced zero well-formed records."""


class SplitError(MTLabError):
    """A dev/test split cannot be satisfied."""


class VocabularyError(MTLabError):
    """Subword training or id lookup failed."""


class ShapeError(MTLabError):
    """Tensor shapes are incompatible for the requested operation."""


class DistributionError(MTLabError):
    """A probability vector is invalid."""


class OptimError(MTLabError):
    """Optimizer misuse or non-finite gradients."""


class MetricError(MTLabError):
    """Metric inputs are inconsistent (length mismatch, empty reference)."""


class DecodeError(MTLabError):
    """Generation cannot proceed (input too long, bad config)."""


class ConfigError(MTLabError):
    """An experiment or CLI configuration is inconsistent."""


class CheckpointError(MTLabError):
    """A checkpoint file is missing, corrupt, or mismatched."""


class SynthError(MTLabError):
    """Synthetic language specs are inconsistent."""
