"""Asymptotic inference for the total least squares fit.

Pieces
------
* Consistent nuisance estimators: the error variance and the limiting
  second-moment matrix of the true design rows.
* The covariance of the normalized fit applied to a direction ``u``,
  in two flavors:

  - ``analytic-normal``: a closed form valid under normal errors.  The
    normalized error/design cross-moment sums converge jointly to five
    independent centered Gaussian blocks, and every block covariance has
    an explicit expression in the error variance and the design moment
    (see :func:`direction_covariance_normal`).
  - ``sandwich``: the distribution-free outer-product-of-scores estimator
    bread^{-1} . meat . bread^{-1}, valid for any symmetric error law.

* Chi-square quantiles (regularized incomplete gamma plus safeguarded
  root-finding) and the confidence ellipsoid for the linear functional
  ``X u`` built from them.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.special

from .errors import (
    DimensionMismatchError,
    DomainError,
    NegativeVarianceError,
    SingularShapeError,
    SingularVAError,
    ZeroDirectionError,
)
from .model import EivDataset
from .tls import TlsFit, _gram_inverse_apply

__all__ = [
    "NuisanceEstimates",
    "AsymptoticCovariance",
    "ConfidenceEllipsoid",
    "estimate_error_variance",
    "estimate_design_moment",
    "estimate_nuisances",
    "block_combination",
    "direction_covariance_normal",
    "direction_covariance_sandwich",
    "vec_covariance_normal",
    "chi2_quantile",
    "confidence_ellipsoid",
]

# Positive-definiteness margin used for the design-moment diagnostic flag.
_PD_RTOL = 1e-10


@dataclass(frozen=True)
class NuisanceEstimates:
    """Plug-in nuisance parameters and the PD diagnostic for the design moment."""

    error_variance: float
    design_moment: np.ndarray
    design_moment_pd: bool


@dataclass(frozen=True)
class AsymptoticCovariance:
    """Covariance of the normalized fit applied to direction ``u``.

    ``matrix`` is symmetric positive semidefinite; ``method`` records which
    estimator produced it, and the ``*_used`` fields echo its inputs.
    """

    u: np.ndarray
    matrix: np.ndarray
    method: str
    x_used: np.ndarray
    design_moment_used: np.ndarray
    error_variance_used: float | None

    def __post_init__(self):
        eigs = np.linalg.eigvalsh(self.matrix)
        scale = max(float(np.trace(self.matrix)), 1e-300)
        if eigs[0] < -1e-10 * scale:
            raise ValueError(f"covariance matrix not PSD: min eigenvalue {eigs[0]:.3e}")


@dataclass(frozen=True)
class ConfidenceEllipsoid:
    """Region {v : (v - center)' shape^{-1} (v - center) <= radius2}."""

    center: np.ndarray
    shape: np.ndarray
    radius2: float
    level: float

    def mahalanobis2(self, v) -> float:
        v = np.asarray(v, dtype=float)
        if v.shape != self.center.shape:
            raise DimensionMismatchError(
                f"point has shape {v.shape}, expected {self.center.shape}"
            )
        delta = v - self.center
        c, low = scipy.linalg.cho_factor(self.shape, check_finite=False)
        return float(delta @ scipy.linalg.cho_solve((c, low), delta, check_finite=False))

    def contains(self, v) -> bool:
        return self.mahalanobis2(v) <= self.radius2

    def interval(self) -> tuple[float, float]:
        """Endpoints in the one-dimensional case."""
        if self.center.shape != (1,):
            raise DimensionMismatchError("interval endpoints exist only when n == 1")
        half = math.sqrt(float(self.shape[0, 0]) * self.radius2)
        return float(self.center[0] - half), float(self.center[0] + half)


def _row_average_moments(data: EivDataset):
    m = data.dims.m
    return (
        data.a.T @ data.a / m,
        data.a.T @ data.b / m,
        data.b.T @ data.b / m,
    )


def estimate_error_variance(data: EivDataset, x_hat) -> float:
    """Residual-moment estimator of the per-coordinate error variance.

    Evaluates (1/d) tr[(bb' - 2 X'ab' + X'aa'X)(I_d + X'X)^{-1}] with the
    row-averaged moment matrices.  The value can dip below zero only through
    round-off when the model holds; such dips are clamped to zero with a
    warning, while genuinely negative values raise NegativeVarianceError.
    """
    x = np.asarray(x_hat, dtype=float)
    if x.shape != (data.dims.n, data.dims.d):
        raise DimensionMismatchError(
            f"X has shape {x.shape}, expected {(data.dims.n, data.dims.d)}"
        )
    aa, ab, bb = _row_average_moments(data)
    inner = bb - 2.0 * (x.T @ ab) + x.T @ aa @ x
    value = float(np.trace(_gram_inverse_apply(x, inner))) / data.dims.d
    positive_part = bb + x.T @ aa @ x
    scale = max(float(np.trace(_gram_inverse_apply(x, positive_part))) / data.dims.d, 1e-300)
    if value < 0.0:
        if value < -1e-12 * scale:
            raise NegativeVarianceError(
                f"estimated error variance {value:.3e} is negative beyond round-off "
                f"(scale {scale:.3e}); the model does not fit"
            )
        warnings.warn(
            f"error variance {value:.3e} within round-off of zero; clamping to 0",
            stacklevel=2,
        )
        value = 0.0
    return value


def estimate_design_moment(data: EivDataset, error_variance: float) -> np.ndarray:
    """Noise-corrected second moment of the design rows: mean(aa') - sigma2 I."""
    error_variance = float(error_variance)
    if error_variance < 0.0:
        raise NegativeVarianceError("error_variance must be nonnegative")
    aa = data.a.T @ data.a / data.dims.m
    out = aa - error_variance * np.eye(data.dims.n)
    return (out + out.T) / 2.0


def estimate_nuisances(data: EivDataset, fit: TlsFit) -> NuisanceEstimates:
    """Convenience wrapper: both nuisance estimates plus the PD diagnostic."""
    s2 = estimate_error_variance(data, fit.x_hat)
    vm = estimate_design_moment(data, s2)
    eigs = np.linalg.eigvalsh(vm)
    pd = bool(eigs[0] > _PD_RTOL * max(1.0, abs(eigs[-1])))
    return NuisanceEstimates(error_variance=s2, design_moment=vm, design_moment_pd=pd)


def block_combination(blocks, x) -> np.ndarray:
    """Linear form combining the five limit blocks at parameter ``x``.

    ``blocks`` is a sequence (g1, g2, g3, g4, g5) with shapes
    (n x n, n x d, n x n, n x d, d x d); the result is

        g1 x - g2 + g3 x - g4 - x (I_d + x'x)^{-1} (x'g3 x - x'g4 - g4'x + g5).
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise DimensionMismatchError("x must be an n x d matrix")
    n, d = x.shape
    g1, g2, g3, g4, g5 = (np.asarray(g, dtype=float) for g in blocks)
    expected = [(n, n), (n, d), (n, n), (n, d), (d, d)]
    for idx, (g, shape) in enumerate(zip((g1, g2, g3, g4, g5), expected), start=1):
        if g.shape != shape:
            raise DimensionMismatchError(
                f"block {idx} has shape {g.shape}, expected {shape}"
            )
    inner = x.T @ g3 @ x - x.T @ g4 - g4.T @ x + g5
    return g1 @ x - g2 + g3 @ x - g4 - x @ _gram_inverse_apply(x, inner)


def _spd_solve(mat: np.ndarray, rhs: np.ndarray, what: str) -> np.ndarray:
    try:
        c, low = scipy.linalg.cho_factor(mat, check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        raise SingularVAError(f"{what} is not positive definite") from exc
    return scipy.linalg.cho_solve((c, low), rhs, check_finite=False)


def _cross_covariance_normal(
    x: np.ndarray, design_moment: np.ndarray, sigma2: float, u: np.ndarray, v: np.ndarray
) -> np.ndarray:
    """Covariance between the limit score applied to directions u and v.

    Under centered normal row errors with covariance sigma2 * I the five
    normalized cross-moment blocks are asymptotically independent Gaussians,
    and second/fourth moment identities give, with w = X u, wp = X v,
    M = (I_d + X'X)^{-1} and P = I_n - X M X' (transpose written '):

      design x input-error block :  sigma2 (w.wp) V
      design x output-error block:  sigma2 (u.v)  V
      input Wishart fluctuation  :  sigma2^2 P ((w.wp) I + wp w') P
      input x output cross block :  sigma2^2 [ (u.v) P^2 + (w.wp) X M M X'
                                      - P wp u' M X' - X M v w' P ]
      output Wishart fluctuation :  sigma2^2 X M ((u.v) I + v u') M X'

    where V is the design second-moment limit.  Their sum is the covariance
    of the summed per-row score in direction u against direction v.
    """
    n = x.shape[0]
    w = x @ u
    wp = x @ v
    ww = float(w @ wp)
    uv = float(u @ v)
    xm = _gram_inverse_apply(x, x.T).T  # X M, n x d
    p = np.eye(n) - xm @ x.T

    cov = sigma2 * (ww + uv) * design_moment
    s4 = sigma2 * sigma2
    cov = cov + s4 * (p @ (ww * np.eye(n) + np.outer(wp, w)) @ p)
    cov = cov + s4 * (uv * (p @ p) + ww * (xm @ xm.T))
    cov = cov - s4 * (p @ np.outer(wp, u) @ xm.T)
    cov = cov - s4 * (xm @ np.outer(v, w) @ p)
    cov = cov + s4 * (xm @ (uv * np.eye(x.shape[1]) + np.outer(v, u)) @ xm.T)
    return cov


def _check_direction(u, d: int) -> np.ndarray:
    u = np.asarray(u, dtype=float).reshape(-1)
    if u.shape != (d,):
        raise DimensionMismatchError(f"direction has length {u.shape[0]}, expected {d}")
    if not np.any(u != 0.0):
        raise ZeroDirectionError("direction vector must be nonzero")
    return u


def direction_covariance_normal(x, design_moment, error_variance, u) -> AsymptoticCovariance:
    """Closed-form covariance of the normalized fit in direction ``u`` (normal errors).

    Sandwiches the summed-score covariance of :func:`_cross_covariance_normal`
    between inverses of the design moment.  Requires a positive definite
    design moment and a nonzero direction.
    """
    x = np.asarray(x, dtype=float)
    design_moment = np.asarray(design_moment, dtype=float)
    u = _check_direction(u, x.shape[1])
    error_variance = float(error_variance)
    mid = _cross_covariance_normal(x, design_moment, error_variance, u, u)
    half = _spd_solve(design_moment, mid, "design moment")
    out = _spd_solve(design_moment, half.T, "design moment")
    out = (out + out.T) / 2.0
    return AsymptoticCovariance(
        u=u,
        matrix=out,
        method="analytic-normal",
        x_used=x,
        design_moment_used=design_moment,
        error_variance_used=error_variance,
    )


def vec_covariance_normal(x, design_moment, error_variance) -> np.ndarray:
    """Full covariance of the column-stacked normalized fit (normal errors).

    Block (j, k) is the cross covariance between columns j and k, each block
    sandwiched between inverses of the design moment; column-major stacking.
    """
    x = np.asarray(x, dtype=float)
    design_moment = np.asarray(design_moment, dtype=float)
    n, d = x.shape
    out = np.empty((n * d, n * d))
    basis = np.eye(d)
    for j in range(d):
        for k in range(d):
            mid = _cross_covariance_normal(x, design_moment, float(error_variance), basis[j], basis[k])
            half = _spd_solve(design_moment, mid, "design moment")
            block = _spd_solve(design_moment, half.T, "design moment").T
            out[j * n : (j + 1) * n, k * n : (k + 1) * n] = block
    return (out + out.T) / 2.0


def direction_covariance_sandwich(data: EivDataset, fit: TlsFit, design_moment, u) -> AsymptoticCovariance:
    """Outer-product-of-scores covariance estimate; distribution-free.

    meat = mean over rows of (s_i u)(s_i u)' with s_i the per-row estimating
    function at the fit, bread = the estimated design moment.
    """
    design_moment = np.asarray(design_moment, dtype=float)
    u = _check_direction(u, data.dims.d)
    x = fit.x_hat
    resid = data.a @ x - data.b
    t = resid @ u
    # s_i u = t_i (a_i - X M r_i) with r_i the i-th residual row
    xm = _gram_inverse_apply(x, x.T).T
    rows = (data.a - resid @ xm.T) * t[:, None]
    mid = rows.T @ rows / data.dims.m
    half = _spd_solve(design_moment, mid, "design moment")
    out = _spd_solve(design_moment, half.T, "design moment")
    out = (out + out.T) / 2.0
    return AsymptoticCovariance(
        u=u,
        matrix=out,
        method="sandwich",
        x_used=x,
        design_moment_used=design_moment,
        error_variance_used=None,
    )


def chi2_quantile(df: int, p: float) -> float:
    """Inverse chi-square CDF via the regularized incomplete gamma function.

    Safeguarded root-finding: Newton steps from a Wilson-Hilferty starting
    point, falling back to bisection whenever a step leaves the bracket.
    Absolute accuracy is well below 1e-9 over df in [1, 1e6].
    """
    if int(df) != df or df < 1:
        raise DomainError(f"df must be a positive integer, got {df}")
    p = float(p)
    if not 0.0 < p < 1.0:
        raise DomainError(f"p must lie strictly between 0 and 1, got {p}")
    df = int(df)
    a = df / 2.0

    def cdf(x: float) -> float:
        return float(scipy.special.gammainc(a, x / 2.0))

    lo = 0.0
    hi = df + 10.0 * math.sqrt(2.0 * df) + 10.0
    while cdf(hi) < p:
        hi *= 2.0

    # Wilson-Hilferty starting point, clamped into the bracket
    z = float(scipy.special.ndtri(p))
    t = 1.0 - 2.0 / (9.0 * df) + z * math.sqrt(2.0 / (9.0 * df))
    x = df * t**3 if t > 0 else hi / 2.0
    x = min(max(x, hi * 1e-12), hi * (1.0 - 1e-12))

    log_norm = scipy.special.gammaln(a) + a * math.log(2.0)
    for _ in range(200):
        f = cdf(x) - p
        if f >= 0.0:
            hi = x
        else:
            lo = x
        if abs(f) <= 1e-16 or hi - lo <= 1e-14 * max(1.0, hi):
            break
        pdf = math.exp((a - 1.0) * math.log(x) - x / 2.0 - log_norm) if x > 0 else 0.0
        step_ok = pdf > 0.0 and math.isfinite(pdf)
        nxt = x - f / pdf if step_ok else 0.5 * (lo + hi)
        if not lo < nxt < hi:
            nxt = 0.5 * (lo + hi)
        if abs(nxt - x) <= 1e-15 * max(1.0, x):
            x = nxt
            break
        x = nxt
    return float(x)


def confidence_ellipsoid(fit: TlsFit, cov: AsymptoticCovariance, m: int, level: float) -> ConfidenceEllipsoid:
    """Ellipsoid for the linear functional ``X u`` at the given confidence level.

    center = fit applied to u, shape = covariance / m, squared radius = the
    chi-square quantile with n degrees of freedom (the functional lives in
    n-space).  Refuses a covariance that is not positive definite.
    """
    level = float(level)
    if not 0.0 < level < 1.0:
        raise DomainError(f"level must lie strictly between 0 and 1, got {level}")
    n = fit.x_hat.shape[0]
    shape = cov.matrix / float(m)
    center = fit.x_hat @ cov.u
    # refuse a covariance whose ellipsoid would live at round-off scale of
    # the center: that is a degenerate design or noise-free data
    floor = (1e-12 * (1.0 + float(np.linalg.norm(center)))) ** 2
    if np.linalg.eigvalsh(shape)[0] <= floor:
        raise SingularShapeError(
            "covariance is not positive definite; the design is degenerate "
            "or the data are noise-free"
        )
    return ConfidenceEllipsoid(
        center=center,
        shape=shape,
        radius2=chi2_quantile(n, level),
        level=level,
    )
