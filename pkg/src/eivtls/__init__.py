"""Total least squares for the multivariate errors-in-variables model.

Fits A X ~ B when both A and B carry i.i.d. row errors of equal unknown
variance, estimates the nuisance parameters needed for asymptotic
inference, and builds confidence ellipsoids for linear functionals X u —
with a Monte Carlo engine that verifies consistency, asymptotic normality,
and coverage empirically.
"""

from .errors import (
    DegenerateSpectrumWarning,
    DimensionMismatchError,
    DomainError,
    EivTlsError,
    InvalidMomentsError,
    NegativeVarianceError,
    NonFiniteError,
    NonPositiveVarianceError,
    NoSolutionError,
    SingularShapeError,
    SingularVAError,
    SmallSampleWarning,
    SpecInvalidError,
    StudyInvalidError,
    TooFewRowsError,
    ZeroDirectionError,
)
from .inference import (
    AsymptoticCovariance,
    ConfidenceEllipsoid,
    NuisanceEstimates,
    block_combination,
    chi2_quantile,
    confidence_ellipsoid,
    direction_covariance_normal,
    direction_covariance_sandwich,
    estimate_design_moment,
    estimate_error_variance,
    estimate_nuisances,
    vec_covariance_normal,
)
from .model import (
    Dims,
    EivDataset,
    NoiseFamily,
    TrueModel,
    make_true_model,
    validate_dataset,
)
from .simulation import (
    SimStudyReport,
    SimStudySpec,
    clt_check_blocks,
    default_study_spec,
    generate_design,
    generate_noise,
    run_study,
)
from .tls import (
    SolverConfig,
    TlsFit,
    objective,
    row_loss,
    row_score,
    score_derivative,
    solve_tls,
    solve_tls_svd,
    total_score,
)

__version__ = "0.1.0"

__all__ = [
    "AsymptoticCovariance",
    "ConfidenceEllipsoid",
    "DegenerateSpectrumWarning",
    "Dims",
    "DimensionMismatchError",
    "DomainError",
    "EivDataset",
    "EivTlsError",
    "InvalidMomentsError",
    "NegativeVarianceError",
    "NoiseFamily",
    "NonFiniteError",
    "NonPositiveVarianceError",
    "NoSolutionError",
    "NuisanceEstimates",
    "SimStudyReport",
    "SimStudySpec",
    "SingularShapeError",
    "SingularVAError",
    "SmallSampleWarning",
    "SolverConfig",
    "SpecInvalidError",
    "StudyInvalidError",
    "TlsFit",
    "TooFewRowsError",
    "TrueModel",
    "ZeroDirectionError",
    "block_combination",
    "chi2_quantile",
    "clt_check_blocks",
    "confidence_ellipsoid",
    "default_study_spec",
    "direction_covariance_normal",
    "direction_covariance_sandwich",
    "estimate_design_moment",
    "estimate_error_variance",
    "estimate_nuisances",
    "generate_design",
    "generate_noise",
    "make_true_model",
    "objective",
    "row_loss",
    "row_score",
    "run_study",
    "score_derivative",
    "solve_tls",
    "solve_tls_svd",
    "total_score",
    "validate_dataset",
    "vec_covariance_normal",
]
