"""Exception types shared across the toolkit."""


class SkycatchError(Exception):
    """Base class for all toolkit errors."""


class DataFormatError(SkycatchError):
    """A persisted dataset/catalog/checkpoint file is malformed."""


class NoCrossingError(SkycatchError):
    """A trajectory (measured or predicted) never descends through the plane."""


class PredictionError(SkycatchError):
    """A predictor could not produce an impact point for the given history."""
