"""Error types raised by the prbench library.

Every failure mode that callers are expected to handle gets its own class so
that the CLI can surface the class name verbatim and scripts can catch
narrowly.  All of them derive from PrbenchError.
"""


class PrbenchError(Exception):
    """Base class for all prbench domain errors."""


class InvalidParam(PrbenchError):
    """A layer parameter is missing, unknown, or out of its legal range."""

    def __init__(self, name, value, reason):
        self.name = name
        self.value = value
        self.reason = reason
        super().__init__(f"parameter {name!r}={value!r}: {reason}")


class NonPositiveOutput(PrbenchError):
    """Kernel/stride/padding combination yields an output dimension < 1."""


class BackendFailure(PrbenchError):
    """A measurement backend failed (crash, timeout, malformed output)."""


class UnsupportedSubject(PrbenchError):
    """The backend cannot measure the given layer or block."""


class IoFailure(PrbenchError):
    """Reading or writing an artifact file failed."""


class CorruptStore(PrbenchError):
    """The measurement store contains a row that does not parse."""


class EmptyRange(PrbenchError):
    """A sweep or lattice range contains too few values."""


class DegenerateInput(PrbenchError):
    """A detector input is too short or constant to analyze."""


class NoPeaks(PrbenchError):
    """Fewer than two delta peaks were found; no step width derivable."""


class NonUniformSteps(PrbenchError):
    """Peak spacing varies too much to assign a single step width."""


class MappingMismatch(PrbenchError):
    """Hardware description mapping and dims lists disagree in length."""


class KindMismatch(PrbenchError):
    """An operation kind differs from the one the artifact was built for."""


class LatticeTooSmall(PrbenchError):
    """More distinct samples were requested than the space contains."""


class TestTrainOverlap(PrbenchError):
    """Test layers overlap the training candidates beyond repair."""


class InsufficientData(PrbenchError):
    """Too few samples to fit the requested model."""


class SingularFit(PrbenchError):
    """Regression inputs are collinear; coefficients are not identifiable."""


class MissingEstimator(PrbenchError):
    """No latency estimator is available for a required operation kind."""


class MissingFusingWeights(PrbenchError):
    """The platform profile lacks fusing weights for a block kind."""


class ParseError(PrbenchError):
    """A document does not conform to its schema."""


class CycleDetected(PrbenchError):
    """The network graph contains a cycle."""


class ShapeMismatch(PrbenchError):
    """Adjacent layers disagree about tensor shapes."""


class LengthMismatch(PrbenchError):
    """Paired sequences differ in length."""


class NonPositiveMeasured(PrbenchError):
    """A measured reference value is zero or negative."""


class EncodingVersionMismatch(PrbenchError):
    """A model was built with an incompatible feature encoding."""


class VersionMismatch(PrbenchError):
    """A file declares a format version this build cannot read."""


class CorruptModel(PrbenchError):
    """A serialized model is truncated or structurally invalid."""
