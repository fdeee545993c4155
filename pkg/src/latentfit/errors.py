"""Exception taxonomy shared by all latentfit modules.

Invalid arguments raise plain ValueError so callers can rely on stdlib
semantics; everything that can fail for domain reasons derives from
LatentFitError so the CLI can map it to a nonzero exit code.
"""


class LatentFitError(Exception):
    """Base class for domain errors raised by this package."""


class InvalidStateError(LatentFitError):
    """Operation called on an object in the wrong state (e.g. stale cache)."""


class FitDegenerateError(LatentFitError):
    """Input signal cannot identify the model parameters."""


class EstimateUnavailableError(LatentFitError):
    """A coarse estimator found no usable structure in the signal."""


class TrainingDivergedError(LatentFitError):
    """Training produced a non-finite loss."""

    def __init__(self, message, stage=None, epoch=None):
        super().__init__(message)
        self.stage = stage
        self.epoch = epoch


class FormatError(LatentFitError):
    """A binary or JSON container failed validation."""
