"""Exception and warning types shared across the package."""


class EivTlsError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatchError(EivTlsError):
    """Input shapes are incompatible."""


class NonFiniteError(EivTlsError):
    """An input matrix contains NaN or Inf entries."""


class TooFewRowsError(EivTlsError):
    """Fewer observations than regressor plus response dimensions."""


class NonPositiveVarianceError(EivTlsError):
    """A variance parameter must be strictly positive."""


class NoSolutionError(EivTlsError):
    """The total least squares problem has no finite solution."""


class NegativeVarianceError(EivTlsError):
    """Estimated error variance is negative beyond round-off."""


class SingularVAError(EivTlsError):
    """The design second-moment matrix is singular or not positive definite."""


class ZeroDirectionError(EivTlsError):
    """The direction vector for a linear functional is zero."""


class SingularShapeError(EivTlsError):
    """The ellipsoid shape matrix is not positive definite."""


class InvalidMomentsError(EivTlsError):
    """Requested design moments are not realizable (factor not SPD)."""


class StudyInvalidError(EivTlsError):
    """A simulation study produced no usable replication at some size."""


class SpecInvalidError(EivTlsError):
    """A study specification failed validation.

    The ``field`` attribute holds the path of the offending entry,
    e.g. ``"noise.df"`` or ``"m_schedule[2]"``.
    """

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class DomainError(EivTlsError):
    """Argument outside the mathematical domain of a special function."""


class DegenerateSpectrumWarning(UserWarning):
    """The singular-value gap separating the solution block is ~zero."""


class SmallSampleWarning(UserWarning):
    """The dataset has barely enough rows; asymptotics are unreliable."""
