"""Exception hierarchy shared by every module in the package."""


class ElsemError(Exception):
    """Base class for all package errors."""


class IllConditioned(ElsemError):
    """A matrix that must be positive definite is not.

    ``pivot`` holds the first non-positive Cholesky pivot when known.
    """

    def __init__(self, message, pivot=None):
        super().__init__(message)
        self.pivot = pivot


class NotInHull(ElsemError):
    """Zero is not in the interior of the convex hull of the constraint rows."""


class MaxIterations(ElsemError):
    """An iterative solver ran out of iterations before converging."""


class DegenerateConstraints(ElsemError):
    """The constraint second-moment matrix is numerically singular."""


class SingularA(ElsemError):
    """``I - B`` is not invertible."""


class NotLocallyIdentified(ElsemError):
    """The Jacobian of the structured covariance is rank deficient."""


class StudyDegenerate(ElsemError):
    """Too many Monte Carlo replications were skipped to report a study."""


class ConfigError(ElsemError):
    """A configuration document is malformed or has unknown keys."""
