"""Exception hierarchy shared across the evaluation pipeline."""

__all__ = [
    "EvaluationError",
    "DomainError",
    "SeparationError",
    "PrecisionCapError",
    "DegenerateSplitError",
]


class EvaluationError(Exception):
    """Base class for failures while bounding or evaluating a dag."""


class DomainError(EvaluationError):
    """Operation applied outside its domain (e.g. even root of a negative)."""


class SeparationError(EvaluationError):
    """An enclosure kept straddling zero after the refinement cap.

    Deciding the sign of such a value needs separation bounds, which this
    package does not provide.
    """


class PrecisionCapError(EvaluationError):
    """A node demanded more precision than the configured cap."""


class DegenerateSplitError(EvaluationError):
    """The critical-path split equation has no root in the feasible range."""
