"""Total least squares: objective, estimating function, and solvers.

The fit minimizes the orthogonal-correction objective

    Q(X) = sum_i (a_i' X - b_i') (I_d + X'X)^{-1} (X'a_i - b_i),

whose stationarity condition is the matrix estimating equation
``sum_i s(a_i, b_i; X) = 0`` with

    s(a, b; X) = a (a'X - b') - X (I_d + X'X)^{-1} (X'a - b)(a'X - b').

Two solvers are provided: the classical SVD construction on the compound
matrix [A, B], and Newton refinement of the estimating equation.  The SVD
solution is globally reliable; the Newton phase certifies that it solves
the estimating equation and polishes ill-conditioned cases.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import (
    DegenerateSpectrumWarning,
    DimensionMismatchError,
    NoSolutionError,
    SmallSampleWarning,
)
from .model import EivDataset

__all__ = [
    "SolverConfig",
    "TlsFit",
    "row_loss",
    "objective",
    "row_score",
    "total_score",
    "score_derivative",
    "solve_tls_svd",
    "solve_tls",
]

# Relative thresholds for the SVD solver (scale-free by construction).
_SINGULAR_V22_RTOL = 1e-12
_DEGENERATE_GAP_RTOL = 1e-10


@dataclass(frozen=True)
class SolverConfig:
    """Newton-phase controls.

    ``tol_score`` defaults to 1e-10 * m when built via :func:`default_for`;
    the raw default here is for direct construction.
    """

    tol_score: float = 1e-10
    max_iter: int = 50
    fd_check: bool = False

    def __post_init__(self):
        if not self.tol_score > 0:
            raise ValueError("tol_score must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")

    @staticmethod
    def default_for(m: int) -> "SolverConfig":
        return SolverConfig(tol_score=1e-10 * m)


@dataclass(frozen=True)
class TlsFit:
    """Result of a total least squares fit.

    ``score_norm`` is the Frobenius norm of the summed estimating function
    at ``x_hat``; when ``converged`` it is at most the solver tolerance.
    """

    x_hat: np.ndarray
    q_value: float
    score_norm: float
    method: str
    converged: bool
    iterations: int
    warnings: tuple[str, ...] = field(default=())


def _gram_inverse_apply(x: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve (I_d + X'X) Y = rhs through a Cholesky factorization.

    The matrix is SPD by construction; a generic inverse is never formed.
    """
    d = x.shape[1]
    s = np.eye(d) + x.T @ x
    c, low = scipy.linalg.cho_factor(s, check_finite=False)
    return scipy.linalg.cho_solve((c, low), rhs, check_finite=False)


def _check_row_shapes(a: np.ndarray, b: np.ndarray, x: np.ndarray):
    if x.ndim != 2:
        raise DimensionMismatchError("X must be an n x d matrix")
    if a.shape != (x.shape[0],):
        raise DimensionMismatchError(f"a has shape {a.shape}, expected ({x.shape[0]},)")
    if b.shape != (x.shape[1],):
        raise DimensionMismatchError(f"b has shape {b.shape}, expected ({x.shape[1]},)")


def row_loss(a, b, x) -> float:
    """Per-observation loss (a'X - b')(I_d + X'X)^{-1}(X'a - b); always >= 0."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    x = np.asarray(x, dtype=float)
    _check_row_shapes(a, b, x)
    r = x.T @ a - b
    return float(r @ _gram_inverse_apply(x, r))


def objective(data: EivDataset, x) -> float:
    """Sum of row losses over the dataset."""
    x = np.asarray(x, dtype=float)
    if x.shape != (data.dims.n, data.dims.d):
        raise DimensionMismatchError(
            f"X has shape {x.shape}, expected {(data.dims.n, data.dims.d)}"
        )
    resid = data.a @ x - data.b
    return float(np.sum(resid * _gram_inverse_apply(x, resid.T).T))


def row_score(a, b, x) -> np.ndarray:
    """Per-observation estimating function value, an n x d matrix.

    Satisfies the gradient identity: half the matrix gradient of
    :func:`row_loss` at X equals ``row_score(a, b, x) @ (I_d + X'X)^{-1}``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    x = np.asarray(x, dtype=float)
    _check_row_shapes(a, b, x)
    r = x.T @ a - b
    return np.outer(a, r) - x @ _gram_inverse_apply(x, np.outer(r, r))


def total_score(data: EivDataset, x) -> np.ndarray:
    """Left-hand side of the estimating equation: row scores summed over the data."""
    x = np.asarray(x, dtype=float)
    if x.shape != (data.dims.n, data.dims.d):
        raise DimensionMismatchError(
            f"X has shape {x.shape}, expected {(data.dims.n, data.dims.d)}"
        )
    resid = data.a @ x - data.b
    return data.a.T @ resid - x @ _gram_inverse_apply(x, resid.T @ resid)


def score_derivative(a, b, x, h) -> np.ndarray:
    """Directional derivative of :func:`row_score` at X in direction H."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    x = np.asarray(x, dtype=float)
    h = np.asarray(h, dtype=float)
    _check_row_shapes(a, b, x)
    if h.shape != x.shape:
        raise DimensionMismatchError(f"H has shape {h.shape}, expected {x.shape}")
    r = x.T @ a - b
    rr = np.outer(r, r)
    ha = h.T @ a
    term1 = np.outer(a, a @ h)
    term2 = -h @ _gram_inverse_apply(x, rr)
    term3 = x @ _gram_inverse_apply(x, (h.T @ x + x.T @ h) @ _gram_inverse_apply(x, rr))
    term4 = -x @ _gram_inverse_apply(x, np.outer(ha, r) + np.outer(r, ha))
    return term1 + term2 + term3 + term4


def _total_score_jacobian(data: EivDataset, x: np.ndarray) -> np.ndarray:
    """Dense (n*d) x (n*d) matrix of the summed score derivative.

    Row sums collapse into three Gram matrices, so assembly is O(1) in m
    once those are formed; n*d is small in all intended uses.
    """
    n, d = x.shape
    resid = data.a @ x - data.b
    g_aa = data.a.T @ data.a
    g_rr = resid.T @ resid
    g_ar = data.a.T @ resid
    m_rr = _gram_inverse_apply(x, g_rr)

    def apply(h: np.ndarray) -> np.ndarray:
        out = g_aa @ h - h @ m_rr
        out += x @ _gram_inverse_apply(x, (h.T @ x + x.T @ h) @ m_rr)
        out -= x @ _gram_inverse_apply(x, h.T @ g_ar + g_ar.T @ h)
        return out

    # vec ordering is column-major to match ravel(order="F") elsewhere
    jac = np.empty((n * d, n * d))
    basis = np.zeros((n, d))
    for col in range(n * d):
        basis[:] = 0.0
        basis[col % n, col // n] = 1.0
        jac[:, col] = apply(basis).ravel(order="F")
    return jac


def solve_tls_svd(data: EivDataset) -> TlsFit:
    """Closed-form fit from the SVD of the compound matrix [A, B].

    Partitions the right singular matrix so that the trailing d columns span
    the d smallest singular directions and returns X = -V12 V22^{-1}.  Raises
    NoSolutionError when V22 is numerically singular (the finite-sample
    analogue of a fit escaping to infinity) and warns when the singular-value
    gap separating the solution block is essentially zero.
    """
    n, d = data.dims.n, data.dims.d
    fit_warnings: list[str] = []
    if data.dims.m == n + d:
        msg = f"m == n + d = {n + d}: fit is exact-identification; asymptotics unreliable"
        warnings.warn(msg, SmallSampleWarning, stacklevel=2)
        fit_warnings.append(msg)

    compound = np.hstack([data.a, data.b])
    _, svals, vt = np.linalg.svd(compound, full_matrices=False)
    v = vt.T
    v12 = v[:n, n:]
    v22 = v[n:, n:]

    gap = (svals[n - 1] - svals[n]) / svals[0] if svals[0] > 0 else 0.0
    if gap <= _DEGENERATE_GAP_RTOL:
        msg = (
            "degenerate spectrum: the singular-value gap separating the "
            f"solution block is {gap:.3e} relative; the fit is ill-determined"
        )
        warnings.warn(msg, DegenerateSpectrumWarning, stacklevel=2)
        fit_warnings.append(msg)

    v22_svals = np.linalg.svd(v22, compute_uv=False)
    if v22_svals[-1] <= _SINGULAR_V22_RTOL * svals[0]:
        raise NoSolutionError(
            "no finite total least squares solution: trailing block of the "
            f"right singular matrix is singular (smallest singular value "
            f"{v22_svals[-1]:.3e} vs scale {svals[0]:.3e})"
        )

    x_hat = -np.linalg.solve(v22.T, v12.T).T
    score = total_score(data, x_hat)
    return TlsFit(
        x_hat=x_hat,
        q_value=objective(data, x_hat),
        score_norm=float(np.linalg.norm(score)),
        method="svd",
        converged=False,
        iterations=0,
        warnings=tuple(fit_warnings),
    )


def _fd_total_score_check(data: EivDataset, x: np.ndarray) -> float:
    """Max relative gap between the assembled Jacobian and a finite difference."""
    rng = np.random.default_rng(0)
    h = rng.standard_normal(x.shape)
    h /= np.linalg.norm(h)
    step = 1e-6 * (1.0 + np.linalg.norm(x))
    fd = (total_score(data, x + step * h) - total_score(data, x - step * h)) / (2 * step)
    jac = _total_score_jacobian(data, x)
    exact = (jac @ h.ravel(order="F")).reshape(x.shape, order="F")
    return float(np.linalg.norm(fd - exact) / max(np.linalg.norm(exact), 1e-30))


def solve_tls(data: EivDataset, cfg: SolverConfig | None = None) -> TlsFit:
    """SVD fit followed by Newton iterations on the estimating equation.

    The SVD solution already solves the equation on well-conditioned inputs,
    so the Newton phase normally certifies convergence without moving the
    estimate; it declares convergence once the Frobenius norm of the summed
    score falls below ``cfg.tol_score``.  When the iteration budget runs out
    the fit is still returned, flagged unconverged.
    """
    if cfg is None:
        cfg = SolverConfig.default_for(data.dims.m)
    fit = solve_tls_svd(data)
    x = fit.x_hat.copy()
    fit_warnings = list(fit.warnings)

    score = total_score(data, x)
    score_norm = float(np.linalg.norm(score))
    iterations = 0
    converged = score_norm <= cfg.tol_score
    while not converged and iterations < cfg.max_iter:
        if cfg.fd_check:
            rel = _fd_total_score_check(data, x)
            if rel > 1e-4:
                fit_warnings.append(f"jacobian finite-difference check off by {rel:.2e}")
        jac = _total_score_jacobian(data, x)
        try:
            step = np.linalg.solve(jac, -score.ravel(order="F"))
        except np.linalg.LinAlgError:
            fit_warnings.append("newton step skipped: singular jacobian")
            break
        x = x + step.reshape(x.shape, order="F")
        iterations += 1
        score = total_score(data, x)
        score_norm = float(np.linalg.norm(score))
        converged = score_norm <= cfg.tol_score

    if not converged:
        fit_warnings.append(
            f"no convergence: score norm {score_norm:.3e} above tolerance "
            f"{cfg.tol_score:.3e} after {iterations} Newton iterations"
        )
    return TlsFit(
        x_hat=x,
        q_value=objective(data, x),
        score_norm=score_norm,
        method="svd+newton",
        converged=converged,
        iterations=iterations,
        warnings=tuple(fit_warnings),
    )
