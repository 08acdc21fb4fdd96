"""Exception types shared across the package."""


class SwqifError(Exception):
    """Base class for all package errors."""


class ParseError(SwqifError):
    """A CSV row could not be parsed (bad field count, non-numeric value, duplicate row)."""


class SchemaError(SwqifError):
    """The CSV header does not provide a required column."""


class InconsistentSequence(SwqifError):
    """The same cluster appears with two different treatment sequences."""


class PeriodOutOfRange(SwqifError):
    """A period index falls outside the structure's estimable range."""


class EmptyCluster(SwqifError):
    """A cluster has no enrolled observations in the structure's period range."""


class DimensionMismatch(SwqifError):
    """Vector/matrix shapes do not agree."""


class SingularDesign(SwqifError):
    """The weighted Gram matrix of the centered design is numerically rank deficient."""

    def __init__(self, message: str, labels: tuple[str, ...] = ()):
        super().__init__(message)
        self.labels = labels


class SingularC(SwqifError):
    """The moment covariance matrix is numerically singular even after ridging."""


class TooManyFolds(SwqifError):
    """Requested more cross-fitting folds than there are clusters."""


class EmptyTraining(SwqifError):
    """A learner received no training rows."""


class UnknownCluster(SwqifError):
    """Prediction requested for a cluster id absent from the cross-fit partition."""


class InsufficientDF(SwqifError):
    """Confidence interval requested with no residual degrees of freedom (I <= p)."""


class DegeneratePeriodWarning(UserWarning):
    """A per-period learner fell back to a pooled fit because a period had no training rows."""


class SmallFoldWarning(UserWarning):
    """A data-adaptive learner was trained on fewer than 50 observations in some fold."""


class DegenerateBasisWarning(UserWarning):
    """A correlation basis materialized to zero for every cluster and was dropped."""
