"""Exception hierarchy shared across the pipeline.

Everything raised on purpose derives from :class:`HydroError`, so callers
(and the CLI) can separate expected failures from genuine bugs.
"""


class HydroError(Exception):
    """Base class for all errors raised by this package."""


class SpecValidationError(HydroError):
    """A domain value violates one of its declared bounds."""


class IngestError(HydroError):
    """An image source could not be read or decoded."""


class LabelingError(IngestError):
    """Labels could not be assigned to the discovered images."""


class PlanningError(HydroError):
    """A cross-validation plan cannot be built from the given manifest."""


class TrainingError(HydroError):
    """A training run cannot start or complete."""


class NumericError(TrainingError):
    """A loss or gradient became non-finite during training."""


class ConfigurationError(HydroError):
    """A configuration value or identifier does not resolve to anything usable."""


class StatsError(HydroError):
    """Metric or bootstrap inputs violate their preconditions."""


class CapabilityError(HydroError):
    """The model does not expose what the requested operation needs."""


class ShapeMismatchError(HydroError):
    """Two grids that must share dimensions do not."""
