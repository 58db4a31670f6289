"""Exception hierarchy shared by all embryometrics modules.

Everything derives from :class:`EmbryoMetricsError`. Input-contract
violations additionally derive from :class:`ValidationError` (a
``ValueError``), which the CLI maps to exit code 1; backend failures map
to exit code 2.
"""


class EmbryoMetricsError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(EmbryoMetricsError, ValueError):
    """An input violated a documented precondition or invariant."""


class NegativeProbabilityError(ValidationError):
    """A probability entry was below the clamping tolerance."""


class NotNormalizedError(ValidationError):
    """A probability vector did not sum to 1 within tolerance."""


class EmptyInputError(ValidationError):
    """An operation that needs at least one element received none."""


class LengthMismatchError(ValidationError):
    """Two paired sequences had different lengths."""


class ShapeMismatchError(ValidationError):
    """Two grids (masks or maps) had different dimensions."""


class MixedKindsError(ValidationError):
    """Cell and pronucleus candidates were mixed in one merge."""


class RoiBoundsError(ValidationError):
    """An ROI window does not fit inside the source grid."""


class PlaneCountError(ValidationError):
    """Focal-plane count was even or too small to pick middle planes."""


class WrongArityError(ValidationError):
    """A fixed-arity operation received the wrong number of arguments."""


class TooManyFramesError(ValidationError):
    """Exhaustive trajectory enumeration refused an oversized input."""


class NoTruthsError(ValidationError):
    """Detection scoring requires at least one ground-truth instance."""


class EmptyMatchError(ValidationError):
    """A statistic over matched pairs received an empty match."""


class FrameMismatchError(ValidationError):
    """Result and ground truth do not describe the same frames."""


class InvalidConfigError(ValidationError):
    """A configuration object failed validation."""


class FormatError(ValidationError):
    """A serialized file did not conform to its schema."""


class MissingPlanesError(ValidationError):
    """A frame lacks a focal-plane reference the pipeline needs."""


class NoEmbryoError(EmbryoMetricsError):
    """No embryo pixels were found in a segmentation map.

    Callers are expected to fall back to an image-centered ROI and
    record that the fallback was used.
    """


class ZeroLikelihoodError(EmbryoMetricsError):
    """The label has zero probability under every predicted class."""


class AllFramesExcludedError(EmbryoMetricsError):
    """Every frame of a movie was excluded from trajectory decoding."""


class NoFeasiblePathError(EmbryoMetricsError):
    """Every monotone trajectory has probability zero.

    Raised both when a frame has no mass on any ordered class and when
    zeros are arranged so that every non-decreasing path hits one.
    """


class BackendError(EmbryoMetricsError):
    """A model backend failed; aborts the embryo with a diagnostic."""

    def __init__(self, stage: str, frame: int, message: str):
        super().__init__(f"backend '{stage}' failed on frame {frame}: {message}")
        self.stage = stage
        self.frame = frame
