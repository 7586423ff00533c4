"""Exception hierarchy shared by all lmmselect modules."""


class LmmSelectError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatch(LmmSelectError):
    """Row counts of x or z disagree with the length of y."""


class GroupSumMismatch(LmmSelectError):
    """Group sizes do not sum to the number of columns of z."""


class NonPsdWeight(LmmSelectError):
    """A full weight matrix fails the symmetry / positive-semidefinite check."""


class SingularRidge(LmmSelectError):
    """z'z + lam_u * W is numerically singular; the random-effect block
    cannot be eliminated.  Usually means lam_u is too small for a weight
    matrix that is degenerate on null directions of z."""


class DegenerateProjection(LmmSelectError):
    """rank(z) equals the number of observations, so projecting out the
    random design annihilates all data."""


class ZeroVarianceColumn(LmmSelectError):
    """A correlation is undefined because a z column or y is constant."""


class NotPositiveDefinite(LmmSelectError):
    """A covariance matrix supplied for inversion is not positive definite."""


class SingularPsi(LmmSelectError):
    """The consistency-check block matrix is too ill-conditioned to invert."""


class UnknownScenario(LmmSelectError):
    """Scenario name not in the generator registry."""


class ManifestError(LmmSelectError):
    """A problem manifest is missing a field or fails schema validation."""
