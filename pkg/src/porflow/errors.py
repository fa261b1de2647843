"""Exception and warning types shared across the package."""


class PorflowError(Exception):
    """Base class for all porflow errors."""


class ValidationError(PorflowError):
    """A configured value violates a model invariant."""


class ParseError(PorflowError):
    """A config file could not be parsed."""


class NonPhysicalFvf(PorflowError):
    """Pressure is outside the validity range of the linearized FVF model."""


class InvalidWellGeometry(PorflowError):
    """Effective radius / wellbore radius / skin combination is unusable."""


class DimensionMismatch(PorflowError):
    """Field shapes disagree with the grid."""


class ShapeMismatch(PorflowError):
    """Network input shape is incompatible with the architecture."""


class OutOfRangeControl(PorflowError):
    """A scheduled control value falls outside the declared normalization bounds."""


class SingularJacobian(PorflowError):
    """The linear solve inside a Newton iteration failed."""


class NonConvergence(PorflowError):
    """Newton did not converge within the iteration and step-cut budget."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class DivergedTraining(PorflowError):
    """Training loss became non-finite."""


class MissingObservation(PorflowError):
    """A producer has no observed well-block pressure for the requested step."""


class MissingCheckpoint(PorflowError):
    """A required per-timestep checkpoint is absent."""


class SpecHashMismatch(PorflowError):
    """Checkpoint was written under a different network architecture."""


class CorruptCheckpoint(PorflowError):
    """Checkpoint payload failed its integrity check."""


class VersionMismatch(PorflowError):
    """Checkpoint container version is not supported."""


class DegenerateReference(PorflowError):
    """Reference field is identically zero; normalized error undefined."""


class DivisionByZeroPixel(PorflowError):
    """A reference pixel is zero in a pixelwise relative-error map."""

    def __init__(self, message, pixel=None):
        super().__init__(message)
        self.pixel = pixel


class IoError(PorflowError):
    """Artifact export failed."""


class CrossflowWarning(UserWarning):
    """A producer's well-block pressure dropped below its BHP (well would inject)."""
