"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: data problems (bad files, bad
parses, empty overlaps) are distinct from numerical failures
(degenerate solves, no RANSAC consensus).
"""


class StitchError(Exception):
    """Base class for all errors raised by this package."""


class DataError(StitchError):
    """Input data is unusable: missing/corrupt files, bad parses, empty overlap."""


class ImageFormatError(DataError):
    """Unsupported or corrupt image file."""


class CorrespondenceFormatError(DataError):
    """Malformed correspondence CSV row or header."""


class DuplicateSourceError(DataError):
    """Two correspondences share the same source point."""


class InsufficientDataError(DataError):
    """Fewer data points than the operation requires."""


class EmptyOverlapError(DataError):
    """The two images share no overlap pixels."""


class ConfigFileError(DataError):
    """Malformed key = value configuration file."""


class NumericalError(StitchError):
    """A solver failed on otherwise well-formed input."""


class DegenerateSolveError(NumericalError):
    """Eigen solve has no isolated smallest eigenvalue (rank-deficient system)."""


class NoConsensusError(NumericalError):
    """RANSAC found no hypothesis with enough inliers."""


class PointAtInfinityError(NumericalError):
    """Projective denominator vanished at the query point."""


class OutOfBoundsError(StitchError):
    """Sample location outside the image domain."""


class UnreliableWindowError(NumericalError):
    """Too many window pixels map outside the target image."""


class IllConditionedJacobianError(NumericalError):
    """Eigen gap too small to differentiate the eigenvector."""


class StepFailedError(NumericalError):
    """Gauss-Newton normal matrix unusable (singular or starved of pixels)."""
