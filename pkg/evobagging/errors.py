"""Exception types raised across the package."""


class EvoBaggingError(Exception):
    """Base class for every error raised by evobagging."""


class DatasetError(EvoBaggingError, ValueError):
    """Invalid dataset content, shape or ingestion problem."""


class ConfigError(EvoBaggingError, ValueError):
    """Invalid experiment or algorithm configuration."""


class TreeError(EvoBaggingError, ValueError):
    """Decision tree fit/predict contract violation."""


class MetricError(EvoBaggingError, ValueError):
    """Metric that is undefined for the given inputs."""


class EnsembleError(EvoBaggingError, ValueError):
    """Ensemble construction or aggregation problem."""


class EvolutionError(EvoBaggingError, ValueError):
    """Evolutionary operator applied to an invalid population or bag."""
