"""Reproducible simulation studies for the total least squares estimator.

A study fixes a true parameter matrix, a deterministic-in-distribution
design, a noise family, and a replication count, then measures the bias,
the scaled covariance, ellipsoid coverage, and normality diagnostics of
the fitted estimator across replications.  Every random stream is keyed by
``(base_seed, stream tag, m, replication index)`` so any single number in
a report can be regenerated in isolation.

The true design is generated once per (m, base_seed) and then held fixed
across replications: the model treats it as nonrandom, so resampling it
would change the model being tested.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg
import scipy.stats

from .errors import InvalidMomentsError, SpecInvalidError, StudyInvalidError
from .inference import (
    chi2_quantile,
    direction_covariance_normal,
    direction_covariance_sandwich,
    estimate_nuisances,
)
from .model import NoiseFamily, validate_dataset
from .tls import SolverConfig, solve_tls
from .errors import NoSolutionError

__all__ = [
    "SimStudySpec",
    "SimStudyReport",
    "generate_design",
    "generate_noise",
    "clt_check_blocks",
    "run_study",
    "default_study_spec",
    "ks_critical_value",
]

_SEED_MASK = (1 << 64) - 1
_DESIGN_STREAM = 0xD5
_NOISE_STREAM = 0xE7

# Flattened block layout used by clt_check_blocks: key, (rows, cols) given (n, d)
_BLOCK_NAMES = ("da", "db", "aa", "ab", "bb")

_DESIGNS = ("gaussian-fixed", "grid")


def _stream(base_seed: int, *key: int) -> np.random.Generator:
    entropy = [int(base_seed) & _SEED_MASK] + [int(k) for k in key]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def ks_critical_value(n_samples: int, alpha: float) -> float:
    """Asymptotic one-sample Kolmogorov-Smirnov critical value."""
    return float(np.sqrt(-0.5 * np.log(alpha / 2.0) / n_samples))


@dataclass(frozen=True, eq=False)
class SimStudySpec:
    """Complete description of a Monte Carlo experiment."""

    n: int
    d: int
    x0: np.ndarray
    sigma: float
    noise: NoiseFamily
    design: str
    mu_a: np.ndarray
    va_target: np.ndarray
    reps: int
    base_seed: int
    m_schedule: tuple[int, ...]
    directions: tuple[np.ndarray, ...]
    levels: tuple[float, ...] = (0.90, 0.95, 0.99)

    def validate(self) -> None:
        if self.n < 1:
            raise SpecInvalidError("dims.n", f"must be >= 1, got {self.n}")
        if self.d < 1:
            raise SpecInvalidError("dims.d", f"must be >= 1, got {self.d}")
        if self.x0.shape != (self.n, self.d):
            raise SpecInvalidError("x0", f"shape {self.x0.shape} != ({self.n}, {self.d})")
        if not self.sigma > 0:
            raise SpecInvalidError("sigma", f"must be positive, got {self.sigma}")
        if self.design not in _DESIGNS:
            raise SpecInvalidError("design", f"unknown design {self.design!r}; choose from {_DESIGNS}")
        if self.mu_a.shape != (self.n,):
            raise SpecInvalidError("mu_a", f"length {self.mu_a.shape} != ({self.n},)")
        if self.va_target.shape != (self.n, self.n):
            raise SpecInvalidError("va_target", f"shape {self.va_target.shape} != ({self.n}, {self.n})")
        if not np.allclose(self.va_target, self.va_target.T):
            raise SpecInvalidError("va_target", "must be symmetric")
        try:
            np.linalg.cholesky(self.va_target)
        except np.linalg.LinAlgError:
            raise SpecInvalidError("va_target", "must be positive definite") from None
        if self.reps < 1:
            raise SpecInvalidError("reps", f"must be >= 1, got {self.reps}")
        if not self.m_schedule:
            raise SpecInvalidError("m_schedule", "must be nonempty")
        for i, m in enumerate(self.m_schedule):
            if m < self.n + self.d:
                raise SpecInvalidError(f"m_schedule[{i}]", f"m={m} below n + d = {self.n + self.d}")
        if not self.directions:
            raise SpecInvalidError("directions", "must be nonempty")
        for i, u in enumerate(self.directions):
            if u.shape != (self.d,):
                raise SpecInvalidError(f"directions[{i}]", f"length {u.shape} != ({self.d},)")
            if not np.any(u != 0.0):
                raise SpecInvalidError(f"directions[{i}]", "direction must be nonzero")
        for i, lev in enumerate(self.levels):
            if not 0.0 < lev < 1.0:
                raise SpecInvalidError(f"levels[{i}]", f"must lie in (0, 1), got {lev}")

    def to_dict(self) -> dict:
        noise: dict = {"kind": self.noise.kind}
        if self.noise.df is not None:
            noise["df"] = int(self.noise.df)
        return {
            "dims": {"n": int(self.n), "d": int(self.d)},
            "x0": [[float(v) for v in row] for row in self.x0],
            "sigma": float(self.sigma),
            "noise": noise,
            "design": self.design,
            "mu_a": [float(v) for v in self.mu_a],
            "va_target": [[float(v) for v in row] for row in self.va_target],
            "reps": int(self.reps),
            "base_seed": int(self.base_seed),
            "m_schedule": [int(m) for m in self.m_schedule],
            "directions": [[float(v) for v in u] for u in self.directions],
            "levels": [float(lev) for lev in self.levels],
        }

    @staticmethod
    def from_dict(raw: dict) -> "SimStudySpec":
        """Parse and validate a study description; errors carry the field path."""

        def need(container, key, path, kind):
            if not isinstance(container, dict) or key not in container:
                raise SpecInvalidError(path, "missing required field")
            value = container[key]
            if kind is float and isinstance(value, (int, float)) and not isinstance(value, bool):
                return float(value)
            if kind is int and isinstance(value, int) and not isinstance(value, bool):
                return int(value)
            if kind in (list, dict, str) and isinstance(value, kind):
                return value
            raise SpecInvalidError(path, f"expected {kind.__name__}")

        dims = need(raw, "dims", "dims", dict)
        n = need(dims, "n", "dims.n", int)
        d = need(dims, "d", "dims.d", int)
        try:
            x0 = np.asarray(need(raw, "x0", "x0", list), dtype=float)
        except (TypeError, ValueError):
            raise SpecInvalidError("x0", "must be a numeric matrix") from None
        noise_raw = need(raw, "noise", "noise", dict)
        kind = need(noise_raw, "kind", "noise.kind", str)
        df = noise_raw.get("df")
        noise = NoiseFamily(kind=kind, df=df)  # raises SpecInvalidError with noise.* path
        try:
            mu_a = np.asarray(need(raw, "mu_a", "mu_a", list), dtype=float)
            va = np.asarray(need(raw, "va_target", "va_target", list), dtype=float)
        except (TypeError, ValueError):
            raise SpecInvalidError("mu_a/va_target", "must be numeric arrays") from None
        schedule = need(raw, "m_schedule", "m_schedule", list)
        for i, m in enumerate(schedule):
            if not isinstance(m, int) or isinstance(m, bool):
                raise SpecInvalidError(f"m_schedule[{i}]", "must be an integer")
        if "directions" in raw:
            try:
                directions = tuple(
                    np.asarray(u, dtype=float) for u in need(raw, "directions", "directions", list)
                )
            except (TypeError, ValueError):
                raise SpecInvalidError("directions", "must be a list of numeric vectors") from None
        else:
            directions = tuple(np.eye(d)[j] for j in range(d))
        if "levels" in raw:
            levels = tuple(float(v) for v in need(raw, "levels", "levels", list))
        else:
            levels = (0.90, 0.95, 0.99)
        spec = SimStudySpec(
            n=n,
            d=d,
            x0=x0,
            sigma=need(raw, "sigma", "sigma", float),
            noise=noise,
            design=need(raw, "design", "design", str),
            mu_a=mu_a,
            va_target=va,
            reps=need(raw, "reps", "reps", int),
            base_seed=need(raw, "base_seed", "base_seed", int),
            m_schedule=tuple(schedule),
            directions=directions,
            levels=levels,
        )
        spec.validate()
        return spec

    def with_base_seed(self, base_seed: int) -> "SimStudySpec":
        return replace(self, base_seed=int(base_seed))


def default_study_spec(
    reps: int = 500,
    m_schedule: tuple[int, ...] = (250, 1000, 4000),
    base_seed: int = 20160311,
    sigma: float = 0.3,
    noise: NoiseFamily = NoiseFamily("gaussian"),
) -> SimStudySpec:
    """The stock n=3, d=2 study: dense parameter, correlated design, moderate noise."""
    n, d = 3, 2
    x0 = _stream(101, 0x5EED).uniform(-1.0, 1.0, (n, d))
    spec = SimStudySpec(
        n=n,
        d=d,
        x0=x0,
        sigma=sigma,
        noise=noise,
        design="gaussian-fixed",
        mu_a=np.full(n, 0.5),
        va_target=np.eye(n) + 0.3,
        reps=reps,
        base_seed=base_seed,
        m_schedule=tuple(m_schedule),
        directions=tuple(np.eye(d)[j] for j in range(d)),
    )
    spec.validate()
    return spec


def _design_factor(spec: SimStudySpec) -> np.ndarray:
    centered = spec.va_target - np.outer(spec.mu_a, spec.mu_a)
    try:
        return np.linalg.cholesky(centered)
    except np.linalg.LinAlgError:
        raise InvalidMomentsError(
            "va_target - mu_a mu_a' must be positive definite to realize the "
            "requested design moments"
        ) from None


def _grid_points(m: int, n: int) -> np.ndarray:
    """Bounded deterministic lattice with mean 0 and second moment exactly I."""
    base = (2.0 * np.arange(m) - m + 1.0)
    raw = np.empty((m, n))
    stride = 1
    idx = np.arange(m)
    for j in range(n):
        while np.gcd(stride, m) != 1:
            stride += 2
        raw[:, j] = base[(stride * idx) % m]
        stride += 2
    raw -= raw.mean(axis=0)
    second = raw.T @ raw / m
    try:
        factor = np.linalg.cholesky(second)
    except np.linalg.LinAlgError:
        raise InvalidMomentsError(
            f"grid design of {m} points in {n} coordinates is degenerate; increase m"
        ) from None
    return scipy.linalg.solve_triangular(factor, raw.T, lower=True).T


def generate_design(spec: SimStudySpec, m: int) -> np.ndarray:
    """The fixed m x n true design for this (m, base_seed).

    ``gaussian-fixed`` draws seeded normal rows around ``mu_a`` with the
    factor of ``va_target - mu_a mu_a'``; ``grid`` builds a deterministic
    bounded lattice whose first and second moments match exactly.  Both are
    bit-for-bit reproducible for a given spec.
    """
    factor = _design_factor(spec)
    if spec.design == "grid":
        points = _grid_points(m, spec.n)
    else:
        rng = _stream(spec.base_seed, _DESIGN_STREAM, m)
        points = rng.standard_normal((m, spec.n))
    return spec.mu_a + points @ factor.T


def generate_noise(spec: SimStudySpec, m: int, rep_index: int) -> tuple[np.ndarray, np.ndarray]:
    """Error matrices for one replication, from its own seed stream."""
    rng = _stream(spec.base_seed, _NOISE_STREAM, m, rep_index)
    z = spec.noise.sample(rng, (m, spec.n + spec.d)) * spec.sigma
    return z[:, : spec.n], z[:, spec.n :]


def _block_shapes(n: int, d: int) -> dict[str, tuple[int, int]]:
    return {"da": (n, n), "db": (n, d), "aa": (n, n), "ab": (n, d), "bb": (d, d)}


def noise_moment_blocks(a0: np.ndarray, ae: np.ndarray, be: np.ndarray, sigma2: float):
    """Normalized five-block cross-moment sums for one replication.

    Blocks: design x input error, design x output error, centered input
    gram, input x output cross gram, centered output gram; each divided
    by sqrt(m).
    """
    m, n = ae.shape
    d = be.shape[1]
    root = np.sqrt(m)
    return {
        "da": a0.T @ ae / root,
        "db": a0.T @ be / root,
        "aa": (ae.T @ ae - m * sigma2 * np.eye(n)) / root,
        "ab": ae.T @ be / root,
        "bb": (be.T @ be - m * sigma2 * np.eye(d)) / root,
    }


def clt_check_blocks(spec: SimStudySpec, m: int, reps: int) -> dict:
    """Empirical normality check of the normalized cross-moment block sums.

    Reports per-entry Kolmogorov-Smirnov statistics against a fitted normal,
    entry means with standard errors, and the largest correlation between
    entries of different blocks (which should vanish for symmetric noise).
    """
    spec.validate()
    if m < 1 or reps < 1:
        raise SpecInvalidError("m/reps", "must be positive")
    a0 = generate_design(spec, m)
    sigma2 = spec.sigma**2
    shapes = _block_shapes(spec.n, spec.d)
    samples = {name: np.empty((reps, r * c)) for name, (r, c) in shapes.items()}
    for rep in range(reps):
        ae, be = generate_noise(spec, m, rep)
        blocks = noise_moment_blocks(a0, ae, be, sigma2)
        for name in _BLOCK_NAMES:
            samples[name][rep] = blocks[name].ravel()

    insufficient = reps < 20
    crit = None if insufficient else ks_critical_value(reps, 0.01)
    components = {}
    n_pass = 0
    n_entries = 0
    for name in _BLOCK_NAMES:
        arr = samples[name]
        mean = arr.mean(axis=0)
        se = arr.std(axis=0, ddof=1) / np.sqrt(reps) if reps > 1 else np.full(arr.shape[1], np.nan)
        entry: dict = {
            "shape": list(shapes[name]),
            "mean": [float(v) for v in mean],
            "se": [None if not np.isfinite(v) else float(v) for v in se],
        }
        if insufficient:
            entry["ks_stat"] = None
            entry["ks_pass"] = None
        else:
            stats, passes = [], []
            for col in range(arr.shape[1]):
                col_std = arr[:, col].std(ddof=1)
                stat = float(
                    scipy.stats.kstest(arr[:, col], "norm", args=(mean[col], col_std)).statistic
                )
                stats.append(stat)
                passes.append(bool(stat < crit))
            entry["ks_stat"] = stats
            entry["ks_pass"] = passes
            n_pass += sum(passes)
            n_entries += len(passes)
        components[name] = entry

    if reps > 2:
        flat = np.hstack([samples[name] for name in _BLOCK_NAMES])
        corr = np.corrcoef(flat.T)
        widths = [samples[name].shape[1] for name in _BLOCK_NAMES]
        offsets = np.cumsum([0] + widths)
        cross_max = 0.0
        for i in range(len(_BLOCK_NAMES)):
            for j in range(i + 1, len(_BLOCK_NAMES)):
                sub = corr[offsets[i] : offsets[i + 1], offsets[j] : offsets[j + 1]]
                cross_max = max(cross_max, float(np.nanmax(np.abs(sub))))
        band = 4.0 / np.sqrt(reps)
    else:
        cross_max, band = None, None

    return {
        "kind": "clt-check-report",
        "schema_version": "1",
        "m": int(m),
        "reps": int(reps),
        "base_seed": int(spec.base_seed),
        "sigma": float(spec.sigma),
        "noise": spec.to_dict()["noise"],
        "insufficient_sample": insufficient,
        "ks_critical_1pct": crit,
        "ks_pass_fraction": (None if insufficient else n_pass / n_entries),
        "max_cross_correlation": cross_max,
        "cross_correlation_band": band,
        "components": components,
    }


@dataclass(frozen=True, eq=False)
class SimStudyReport:
    """Aggregated study results; ``to_dict()`` gives the canonical JSON form."""

    spec: SimStudySpec
    per_m: tuple[dict, ...]

    def to_dict(self) -> dict:
        return {
            "kind": "sim-study-report",
            "schema_version": "1",
            "spec": self.spec.to_dict(),
            "per_m": list(self.per_m),
        }


def matrix_payload(arr: np.ndarray) -> dict:
    return {"shape": [int(s) for s in arr.shape], "data": [float(v) for v in arr.ravel()]}


@functools.lru_cache(maxsize=None)
def _cached_quantile(df: int, level: float) -> float:
    return chi2_quantile(df, level)


def _inv_sqrt_spd(mat: np.ndarray) -> np.ndarray | None:
    eigvals, eigvecs = np.linalg.eigh(mat)
    if eigvals[0] <= 0:
        return None
    return eigvecs @ np.diag(1.0 / np.sqrt(eigvals)) @ eigvecs.T


def run_study(spec: SimStudySpec) -> SimStudyReport:
    """Run the full experiment described by ``spec``.

    For every m in the schedule and every replication: simulate, fit,
    estimate nuisances, and evaluate coverage and studentized residuals for
    each requested direction under both covariance methods.  Replications
    that fail to fit (or whose nuisance estimates cannot support inference)
    are counted and excluded from moment statistics, never imputed.
    """
    spec.validate()
    per_m = []
    for m in spec.m_schedule:
        per_m.append(_run_one_m(spec, m))
    return SimStudyReport(spec=spec, per_m=tuple(per_m))


def _run_one_m(spec: SimStudySpec, m: int) -> dict:
    n, d = spec.n, spec.d
    a0 = generate_design(spec, m)
    b0 = a0 @ spec.x0
    cfg = SolverConfig.default_for(m)
    sigma2_true = spec.sigma**2
    n_methods = ("analytic", "sandwich")

    errors_vec: list[np.ndarray] = []
    x_err_norms: list[float] = []
    sigma2_hats: list[float] = []
    vm_rel_errors: list[float] = []
    covered: dict[tuple[int, str, float], int] = {
        (i, meth, lev): 0 for i in range(len(spec.directions)) for meth in n_methods for lev in spec.levels
    }
    inference_used = 0
    studentized: dict[tuple[int, str], list[np.ndarray]] = {
        (i, meth): [] for i in range(len(spec.directions)) for meth in n_methods
    }
    su_gaps: dict[int, list[float]] = {i: [] for i in range(len(spec.directions))}
    n_no_solution = 0
    n_no_convergence = 0
    n_inference_failed = 0

    va_norm = np.linalg.norm(spec.va_target)
    for rep in range(spec.reps):
        ae, be = generate_noise(spec, m, rep)
        data = validate_dataset(a0 + ae, b0 + be)
        try:
            fit = solve_tls(data, cfg)
        except NoSolutionError:
            n_no_solution += 1
            continue
        if not fit.converged:
            n_no_convergence += 1
            continue

        x_err = fit.x_hat - spec.x0
        errors_vec.append(x_err.ravel(order="F"))
        x_err_norms.append(float(np.linalg.norm(x_err)))
        nuis = estimate_nuisances(data, fit)
        sigma2_hats.append(nuis.error_variance)
        vm_rel_errors.append(float(np.linalg.norm(nuis.design_moment - spec.va_target) / va_norm))

        if not nuis.design_moment_pd:
            n_inference_failed += 1
            continue
        rep_ok = True
        rep_covered = {}
        rep_student = {}
        rep_gaps = {}
        for i, u in enumerate(spec.directions):
            cov_a = direction_covariance_normal(
                fit.x_hat, nuis.design_moment, nuis.error_variance, u
            )
            cov_s = direction_covariance_sandwich(data, fit, nuis.design_moment, u)
            norm_a = np.linalg.norm(cov_a.matrix)
            rep_gaps[i] = float(np.linalg.norm(cov_s.matrix - cov_a.matrix) / norm_a) if norm_a > 0 else None
            delta = x_err @ u
            for meth, cov in (("analytic", cov_a), ("sandwich", cov_s)):
                root_inv = _inv_sqrt_spd(cov.matrix / m)
                if root_inv is None:
                    rep_ok = False
                    break
                rep_student[(i, meth)] = root_inv @ delta
                m2 = float(delta @ np.linalg.solve(cov.matrix / m, delta))
                for lev in spec.levels:
                    rep_covered[(i, meth, lev)] = m2 <= _cached_quantile(n, lev)
            if not rep_ok:
                break
        if not rep_ok:
            n_inference_failed += 1
            continue
        inference_used += 1
        for key, flag in rep_covered.items():
            covered[key] += int(flag)
        for key, z in rep_student.items():
            studentized[key].append(z)
        for i, gap in rep_gaps.items():
            if gap is not None:
                su_gaps[i].append(gap)

    used = len(errors_vec)
    if used == 0:
        raise StudyInvalidError(f"all {spec.reps} replications failed at m={m}")

    err_mat = np.array(errors_vec)
    bias = err_mat.mean(axis=0).reshape((n, d), order="F")
    scaled = np.sqrt(m) * err_mat
    scaled_cov = np.cov(scaled.T, ddof=1) if used > 1 else None
    if scaled_cov is not None:
        scaled_cov = np.atleast_2d(scaled_cov)
    sig = np.array(sigma2_hats)
    sig_rel = np.abs(sig - sigma2_true) / sigma2_true

    directions_out = []
    ks_possible = inference_used >= 20
    crit = ks_critical_value(inference_used, 0.01) if ks_possible else None
    for i, u in enumerate(spec.directions):
        coverage = {}
        for meth in n_methods:
            coverage[meth] = {}
            for lev in spec.levels:
                k = covered[(i, meth, lev)]
                rate = k / inference_used if inference_used else None
                se = (
                    float(np.sqrt(rate * (1.0 - rate) / inference_used))
                    if inference_used
                    else None
                )
                coverage[meth][f"{lev:g}"] = {
                    "covered": int(k),
                    "rate": rate,
                    "se": se,
                }
        ks_out = {}
        for meth in n_methods:
            z_list = studentized[(i, meth)]
            if not ks_possible or not z_list:
                ks_out[meth] = {"stats": None, "pass": None, "insufficient_sample": True}
                continue
            z_arr = np.array(z_list)
            stats = [
                float(scipy.stats.kstest(z_arr[:, coord], "norm").statistic)
                for coord in range(n)
            ]
            ks_out[meth] = {
                "stats": stats,
                "pass": [bool(s < crit) for s in stats],
                "insufficient_sample": False,
            }
        gaps = np.array(su_gaps[i]) if su_gaps[i] else None
        directions_out.append(
            {
                "u": [float(v) for v in u],
                "coverage": coverage,
                "ks_studentized": ks_out,
                "ks_critical_1pct": crit,
                "su_gap_rel_fro": (
                    None
                    if gaps is None
                    else {
                        "median": float(np.median(gaps)),
                        "q95": float(np.quantile(gaps, 0.95)),
                    }
                ),
            }
        )

    return {
        "m": int(m),
        "seeds": {
            "base_seed": int(spec.base_seed),
            "design_stream": [int(spec.base_seed) & _SEED_MASK, _DESIGN_STREAM, int(m)],
            "noise_stream_format": [int(spec.base_seed) & _SEED_MASK, _NOISE_STREAM, int(m), "rep"],
        },
        "failures": {
            "no_solution": n_no_solution,
            "no_convergence": n_no_convergence,
            "inference": n_inference_failed,
            "used": used,
            "inference_used": inference_used,
        },
        "bias": matrix_payload(bias),
        "scaled_covariance": None if scaled_cov is None else matrix_payload(scaled_cov),
        "median_x_error": float(np.median(x_err_norms)),
        "mean_x_error": float(np.mean(x_err_norms)),
        "sigma2": {
            "truth": float(sigma2_true),
            "mean": float(sig.mean()),
            "rel_err_median": float(np.median(sig_rel)),
            "rel_err_max": float(sig_rel.max()),
        },
        "design_moment": {
            "rel_err_median": float(np.median(vm_rel_errors)),
            "rel_err_max": float(np.max(vm_rel_errors)),
        },
        "directions": directions_out,
    }
