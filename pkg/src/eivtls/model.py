"""Domain types for the functional errors-in-variables model.

The observed data are two matrices, an m x n input ``A`` and an m x d
response ``B``, whose rows are paired observations.  The true (noise-free)
input matrix is nonrandom; both observed matrices carry additive i.i.d.
row errors with a common per-coordinate variance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatchError,
    NonFiniteError,
    NonPositiveVarianceError,
    SpecInvalidError,
    TooFewRowsError,
)

__all__ = [
    "Dims",
    "EivDataset",
    "TrueModel",
    "NoiseFamily",
    "validate_dataset",
    "make_true_model",
]


def _as_matrix(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 2:
        raise DimensionMismatchError(f"{name} must be a 2-d matrix, got ndim={arr.ndim}")
    return arr


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=float, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Dims:
    """Problem sizes: m observations, n regressors, d responses.

    Fitting requires m >= n + d; that floor is enforced where data enter
    (:func:`validate_dataset`), so a ground-truth description may be smaller.
    """

    m: int
    n: int
    d: int

    def __post_init__(self):
        if self.n < 1 or self.d < 1:
            raise DimensionMismatchError(f"need n >= 1 and d >= 1, got n={self.n}, d={self.d}")


@dataclass(frozen=True)
class EivDataset:
    """Validated observation pair (A, B); row i of each is observation i."""

    dims: Dims
    a: np.ndarray
    b: np.ndarray


@dataclass(frozen=True)
class TrueModel:
    """Noise-free model: nonrandom input ``a0``, parameter ``x0``, error variance.

    The true response is never stored; it is always derived as ``a0 @ x0``.
    """

    dims: Dims
    a0: np.ndarray
    x0: np.ndarray
    sigma2: float

    @property
    def b0(self) -> np.ndarray:
        return self.a0 @ self.x0

    def noise_free_dataset(self) -> EivDataset:
        return validate_dataset(self.a0, self.b0)


def validate_dataset(a, b) -> EivDataset:
    """Check shapes and finiteness of (A, B) and wrap them in an EivDataset.

    Raises DimensionMismatchError when the row counts differ, NonFiniteError
    on NaN/Inf entries, and TooFewRowsError when m < n + d.
    """
    a = _as_matrix(a, "A")
    b = _as_matrix(b, "B")
    if a.shape[0] != b.shape[0]:
        raise DimensionMismatchError(
            f"A and B must have equal row counts, got {a.shape[0]} and {b.shape[0]}"
        )
    if not np.isfinite(a).all():
        raise NonFiniteError("A contains NaN or Inf entries")
    if not np.isfinite(b).all():
        raise NonFiniteError("B contains NaN or Inf entries")
    m, n, d = a.shape[0], a.shape[1], b.shape[1]
    if m < n + d:
        raise TooFewRowsError(
            f"need m >= n + d for a meaningful fit, got m={m}, n+d={n + d}"
        )
    return EivDataset(dims=Dims(m=m, n=n, d=d), a=_freeze(a), b=_freeze(b))


def make_true_model(a0, x0, sigma2: float) -> TrueModel:
    """Build a TrueModel after checking shape compatibility and sigma2 > 0."""
    a0 = _as_matrix(a0, "a0")
    x0 = _as_matrix(x0, "x0")
    if a0.shape[1] != x0.shape[0]:
        raise DimensionMismatchError(
            f"a0 has {a0.shape[1]} columns but x0 has {x0.shape[0]} rows"
        )
    if not np.isfinite(a0).all() or not np.isfinite(x0).all():
        raise NonFiniteError("a0/x0 contain NaN or Inf entries")
    sigma2 = float(sigma2)
    if not sigma2 > 0.0:
        raise NonPositiveVarianceError(f"sigma2 must be positive, got {sigma2}")
    dims = Dims(m=a0.shape[0], n=a0.shape[1], d=x0.shape[1])
    return TrueModel(dims=dims, a0=_freeze(a0), x0=_freeze(x0), sigma2=sigma2)


_FAMILIES = ("gaussian", "student-t", "uniform")


@dataclass(frozen=True)
class NoiseFamily:
    """A symmetric, unit-variance error distribution for a single coordinate.

    Draws are scaled so that each coordinate has variance exactly 1 before
    multiplication by the model noise level:

    * ``gaussian`` -- standard normal;
    * ``student-t`` -- t(df) times sqrt((df - 2)/df), df >= 9 so that sixth
      moments exist with margin;
    * ``uniform`` -- uniform on [-sqrt(3), sqrt(3)].
    """

    kind: str
    df: int | None = field(default=None)

    def __post_init__(self):
        if self.kind not in _FAMILIES:
            raise SpecInvalidError(
                "noise.kind", f"unknown family {self.kind!r}; choose from {_FAMILIES}"
            )
        if self.kind == "student-t":
            if self.df is None:
                raise SpecInvalidError("noise.df", "student-t requires df")
            if self.df < 9:
                raise SpecInvalidError("noise.df", f"student-t needs df >= 9, got {self.df}")
        elif self.df is not None:
            raise SpecInvalidError("noise.df", f"df is only valid for student-t, got kind={self.kind!r}")

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        """Draw unit-variance samples of the given shape."""
        if self.kind == "gaussian":
            return rng.standard_normal(size)
        if self.kind == "student-t":
            return rng.standard_t(self.df, size) * np.sqrt((self.df - 2) / self.df)
        return rng.uniform(-np.sqrt(3.0), np.sqrt(3.0), size)
