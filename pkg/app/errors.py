"""Exception hierarchy shared by every package of the testbed."""


class SigAdvError(Exception):
    """Base class for all testbed errors."""


class ImageError(SigAdvError):
    """An image violates the grayscale image contract."""


class NoMass(ImageError):
    """Image has no nonzero intensity to center on."""


class DoesNotFit(ImageError):
    """Translated content would leave the target canvas."""


class Degenerate(ImageError):
    """Image has fewer than two distinct intensity levels."""


class DimensionMismatch(SigAdvError):
    """Two operands have incompatible shapes."""


class FormatError(SigAdvError):
    """A serialized artifact has a bad magic or is truncated."""


class ConfigError(SigAdvError):
    """Invalid configuration or command-line arguments."""


class InsufficientData(SigAdvError):
    """Not enough users or samples for the requested operation."""


class ZeroGradient(SigAdvError):
    """Gradient norm is zero where a direction is required."""


class CapabilityError(SigAdvError):
    """Oracle or pipeline lacks a capability the caller needs (e.g. gradients)."""


class InitFailure(SigAdvError):
    """No adversarial starting point could be found."""


class ConvergenceError(SigAdvError):
    """Solver hit its iteration cap before reaching tolerance."""


class NonFiniteError(SigAdvError):
    """NaN or Inf appeared in a tensor."""


class TrainingDivergence(NonFiniteError):
    """Training loss became non-finite."""


class MissingArtifact(SigAdvError):
    """A prerequisite model, dataset or threshold file is absent."""
