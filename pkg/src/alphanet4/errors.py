"""Exception types shared across the pipeline."""


class AlphaNetError(Exception):
    """Base class for all pipeline errors."""


class ParameterError(AlphaNetError):
    """Invalid argument to a generator or operator."""


class HistoryError(AlphaNetError):
    """Not enough history to build an image, label, or style factor."""


class GapError(AlphaNetError):
    """An unusable row (zero denominator) falls inside a required range."""


class WindowError(AlphaNetError):
    """Rolling window too short for the requested operator."""


class ShapeError(AlphaNetError):
    """Array shape disagrees with the operation's contract."""


class BatchError(AlphaNetError):
    """Batch is empty or too small for the requested statistic."""


class MaskError(AlphaNetError):
    """Feature mask does not match the image registry it is applied to."""


class BetaError(AlphaNetError):
    """Degenerate market series in the beta regression."""


class LogDomainError(AlphaNetError):
    """Return <= -1 hit a log transform."""


class DomainError(AlphaNetError):
    """Scalar input outside the operator's domain."""


class RegressionError(AlphaNetError):
    """Cross-sectional regression is rank deficient or otherwise unsolvable."""


class NumericError(AlphaNetError):
    """NaN or Inf appeared where finite values are required."""


class ConfigError(AlphaNetError):
    """Invalid configuration value; message names the field."""


class ValidationError(AlphaNetError):
    """Validation slice unusable for early stopping."""
