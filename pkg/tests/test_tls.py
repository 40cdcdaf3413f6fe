import warnings

import numpy as np
import pytest

from eivtls import (
    DegenerateSpectrumWarning,
    DimensionMismatchError,
    NoSolutionError,
    SmallSampleWarning,
    SolverConfig,
    objective,
    row_loss,
    row_score,
    score_derivative,
    solve_tls,
    solve_tls_svd,
    total_score,
    validate_dataset,
)
from conftest import noisy_dataset, random_true_model


def minv_of(x):
    return np.linalg.inv(np.eye(x.shape[1]) + x.T @ x)


class TestRowLoss:
    def test_zero_parameter_gives_squared_response(self, rng):
        a, b = rng.standard_normal(3), rng.standard_normal(2)
        assert row_loss(a, b, np.zeros((3, 2))) == pytest.approx(b @ b, rel=1e-14)

    def test_exact_fit_gives_zero(self, rng):
        x = rng.standard_normal((3, 2))
        a = rng.standard_normal(3)
        assert row_loss(a, x.T @ a, x) == pytest.approx(0.0, abs=1e-28)

    def test_scalar_value(self):
        assert row_loss([1.0], [0.0], [[1.0]]) == pytest.approx(0.5, rel=1e-15)

    def test_nonnegative(self, rng):
        for _ in range(50):
            a, b = rng.standard_normal(2), rng.standard_normal(2)
            x = rng.standard_normal((2, 2)) * 3
            assert row_loss(a, b, x) >= 0.0

    def test_shape_check(self):
        with pytest.raises(DimensionMismatchError):
            row_loss([1.0, 2.0], [0.0], [[1.0]])


class TestObjective:
    def test_noise_free_vanishes(self, rng):
        model = random_true_model(rng, n=3, d=2)
        data = model.noise_free_dataset()
        assert objective(data, model.x0) <= 1e-18 * np.linalg.norm(data.b) ** 2

    def test_zero_parameter(self, rng):
        model = random_true_model(rng, n=2, d=2)
        data = noisy_dataset(model, rng)
        assert objective(data, np.zeros((2, 2))) == pytest.approx(
            np.linalg.norm(data.b) ** 2, rel=1e-12
        )

    def test_two_row_hand_value(self):
        # rows (a, b) = (1, 0) and (2, 1) with scalar x = 1; brute-force oracle
        data = validate_dataset(np.array([[1.0], [2.0]]), np.array([[0.0], [1.0]]))
        brute = sum((a * 1.0 - b) ** 2 / (1 + 1.0**2) for a, b in [(1.0, 0.0), (2.0, 1.0)])
        assert brute == pytest.approx(1.0)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", SmallSampleWarning)
            assert objective(data, np.array([[1.0]])) == pytest.approx(1.0, rel=1e-14)

    def test_matches_row_loss_sum(self, rng):
        model = random_true_model(rng, n=3, d=2, m=17)
        data = noisy_dataset(model, rng)
        x = rng.standard_normal((3, 2))
        total = sum(row_loss(data.a[i], data.b[i], x) for i in range(17))
        assert objective(data, x) == pytest.approx(total, rel=1e-12)


class TestRowScore:
    def test_exact_fit_row_is_zero(self, rng):
        x = rng.standard_normal((3, 2))
        a = rng.standard_normal(3)
        assert np.allclose(row_score(a, x.T @ a, x), 0.0, atol=1e-14)

    def test_zero_parameter(self, rng):
        a, b = rng.standard_normal(3), rng.standard_normal(2)
        assert np.allclose(row_score(a, b, np.zeros((3, 2))), -np.outer(a, b), atol=1e-15)

    def test_scalar_value(self):
        assert row_score([1.0], [0.0], [[1.0]])[0, 0] == pytest.approx(0.5, rel=1e-15)

    def test_gradient_identity(self, rng):
        # half the loss gradient equals score times the gram inverse
        for _ in range(100):
            n = int(rng.integers(1, 4))
            d = int(rng.integers(1, 4))
            a, b = rng.standard_normal(n), rng.standard_normal(d)
            x = rng.standard_normal((n, d))
            x *= min(1.0, 5.0 / max(np.linalg.norm(x), 1e-12))
            eps = 1e-6 * (1.0 + np.linalg.norm(x))
            grad_fd = np.zeros((n, d))
            for i in range(n):
                for j in range(d):
                    e = np.zeros((n, d))
                    e[i, j] = eps
                    grad_fd[i, j] = (row_loss(a, b, x + e) - row_loss(a, b, x - e)) / (2 * eps)
            grad = 2.0 * row_score(a, b, x) @ minv_of(x)
            tol = 1e-5 * (np.abs(grad) + 1e-3 * max(np.abs(grad).max(), 1e-12))
            assert np.all(np.abs(grad_fd - grad) <= tol)

    def test_unbiased_at_truth(self, rng):
        # sample mean of the score at the true parameter stays within 4 SE of 0
        n, d, big = 3, 2, 100_000
        x0 = rng.uniform(-1, 1, (n, d))
        a0 = rng.standard_normal(n)
        sigma = 0.5
        arows = a0 + rng.standard_normal((big, n)) * sigma
        brows = a0 @ x0 + rng.standard_normal((big, d)) * sigma
        resid = arows @ x0 - brows
        scores = np.einsum("mi,mj->mij", arows, resid) - np.einsum(
            "ik,mk,mj->mij", x0 @ minv_of(x0), resid, resid
        )
        for i in range(3):  # tie the batched path to the public op
            assert np.allclose(scores[i], row_score(arows[i], brows[i], x0), rtol=1e-12)
        mean = scores.mean(axis=0)
        se = scores.std(axis=0, ddof=1) / np.sqrt(big)
        assert np.all(np.abs(mean) <= 4.0 * se)


class TestTotalScore:
    def test_noise_free_at_truth(self, rng):
        model = random_true_model(rng, n=3, d=2)
        data = model.noise_free_dataset()
        scale = np.linalg.norm(data.a) * np.linalg.norm(data.b)
        assert np.linalg.norm(total_score(data, model.x0)) <= 1e-12 * scale

    def test_zero_parameter(self, rng):
        model = random_true_model(rng, n=2, d=3)
        data = noisy_dataset(model, rng)
        assert np.allclose(total_score(data, np.zeros((2, 3))), -data.a.T @ data.b, rtol=1e-12)

    def test_matches_row_sum(self, rng):
        model = random_true_model(rng, n=2, d=2, m=13)
        data = noisy_dataset(model, rng)
        x = rng.standard_normal((2, 2))
        by_rows = sum(row_score(data.a[i], data.b[i], x) for i in range(13))
        assert np.allclose(total_score(data, x), by_rows, rtol=1e-11)


class TestScoreDerivative:
    def test_zero_parameter_form(self, rng):
        a, b = rng.standard_normal(3), rng.standard_normal(2)
        h = rng.standard_normal((3, 2))
        expected = np.outer(a, a) @ h - h @ np.outer(b, b)
        assert np.allclose(score_derivative(a, b, np.zeros((3, 2)), h), expected, rtol=1e-13)

    def test_finite_difference(self, rng):
        for _ in range(100):
            n = int(rng.integers(1, 4))
            d = int(rng.integers(1, 4))
            a, b = rng.standard_normal(n), rng.standard_normal(d)
            x, h = rng.standard_normal((n, d)), rng.standard_normal((n, d))
            eps = 1e-6 * (1.0 + np.linalg.norm(x))
            fd = (row_score(a, b, x + eps * h) - row_score(a, b, x - eps * h)) / (2 * eps)
            exact = score_derivative(a, b, x, h)
            assert np.linalg.norm(fd - exact) <= 1e-5 * max(np.linalg.norm(exact), 1e-9)

    def test_mean_at_truth_is_design_outer_product(self):
        # Monte Carlo mean of the derivative at the truth, 1e5 draws, 3 SE band
        rng = np.random.default_rng(0)
        n, d, big = 3, 2, 100_000
        x0 = rng.uniform(-1, 1, (n, d))
        a0 = rng.standard_normal(n)
        sigma = 0.5
        arows = a0 + rng.standard_normal((big, n)) * sigma
        brows = a0 @ x0 + rng.standard_normal((big, d)) * sigma
        h = rng.standard_normal((n, d))
        minv = minv_of(x0)
        resid = arows @ x0 - brows
        ha = arows @ h
        xm = x0 @ minv
        k = xm @ (h.T @ x0 + x0.T @ h) @ minv
        jacs = (
            np.einsum("mi,mj->mij", arows, ha)
            - np.einsum("ik,mk,mj->mij", h @ minv, resid, resid)
            + np.einsum("ik,mk,mj->mij", k, resid, resid)
            - np.einsum("ik,mk,mj->mij", xm, ha, resid)
            - np.einsum("ik,mk,mj->mij", xm, resid, ha)
        )
        for i in range(3):
            assert np.allclose(jacs[i], score_derivative(arows[i], brows[i], x0, h), rtol=1e-12)
        mean = jacs.mean(axis=0)
        se = jacs.std(axis=0, ddof=1) / np.sqrt(big)
        assert np.all(np.abs(mean - np.outer(a0, a0) @ h) <= 3.0 * se)

    def test_shape_check(self, rng):
        with pytest.raises(DimensionMismatchError):
            score_derivative(rng.standard_normal(2), rng.standard_normal(2),
                             rng.standard_normal((2, 2)), rng.standard_normal((3, 2)))


class TestSvdSolver:
    def test_noise_free_recovery(self, rng):
        for _ in range(20):
            model = random_true_model(rng)
            fit = solve_tls_svd(model.noise_free_dataset())
            assert np.linalg.norm(fit.x_hat - model.x0) <= 1e-10 * (1 + np.linalg.norm(model.x0))

    def test_consistent_scalar_system(self):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", SmallSampleWarning)
            fit = solve_tls_svd(validate_dataset([[1.0], [2.0]], [[2.0], [4.0]]))
        assert fit.x_hat[0, 0] == pytest.approx(2.0, abs=1e-12)

    def test_matches_grid_search_oracle(self):
        data = validate_dataset([[1.0], [0.0]], [[1.0], [1.0]])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", SmallSampleWarning)
            fit = solve_tls_svd(data)
        grid = np.linspace(-10.0, 10.0, 400_001)
        q = ((grid - 1.0) ** 2 + 1.0) / (1.0 + grid**2)  # objective by direct evaluation
        best = grid[np.argmin(q)]
        step = grid[1] - grid[0]
        assert abs(fit.x_hat[0, 0] - best) <= step
        # the minimizer is the golden ratio
        assert fit.x_hat[0, 0] == pytest.approx((1 + np.sqrt(5.0)) / 2, abs=1e-9)

    def test_no_solution_when_trailing_block_singular(self):
        eps = 1e-20
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            with pytest.raises(NoSolutionError):
                solve_tls_svd(validate_dataset([[eps], [-eps]], [[1.0], [1.0]]))

    def test_degenerate_spectrum_warns(self):
        v = np.array([1.0, 2.0, 3.0, -1.0, 0.5])
        data = validate_dataset(np.column_stack([v, v]), v[:, None])
        with pytest.warns(DegenerateSpectrumWarning):
            fit = solve_tls_svd(data)
        assert any("degenerate" in w for w in fit.warnings)

    def test_small_sample_warns(self):
        with pytest.warns(SmallSampleWarning):
            solve_tls_svd(validate_dataset([[1.0], [2.0]], [[2.0], [4.0]]))


class TestNewtonSolver:
    def test_agrees_with_svd(self, rng):
        for _ in range(20):
            model = random_true_model(rng)
            data = noisy_dataset(model, rng)
            svd_fit = solve_tls_svd(data)
            fit = solve_tls(data)
            assert fit.method == "svd+newton"
            assert np.linalg.norm(fit.x_hat - svd_fit.x_hat) <= 1e-8

    def test_noise_free_converges_immediately(self, rng):
        model = random_true_model(rng, n=3, d=2)
        data = model.noise_free_dataset()
        fit = solve_tls(data)
        assert fit.converged
        assert fit.iterations <= 1
        assert fit.q_value <= 1e-18 * np.linalg.norm(data.b) ** 2

    def test_stationarity(self, rng):
        for _ in range(10):
            model = random_true_model(rng)
            data = noisy_dataset(model, rng)
            cfg = SolverConfig.default_for(data.dims.m)
            fit = solve_tls(data, cfg)
            assert fit.converged
            assert fit.score_norm <= cfg.tol_score
            assert np.linalg.norm(total_score(data, fit.x_hat)) <= cfg.tol_score

    def test_local_minimality(self, rng):
        model = random_true_model(rng, n=3, d=2, m=80)
        data = noisy_dataset(model, rng)
        fit = solve_tls(data)
        q0 = objective(data, fit.x_hat)
        for _ in range(100):
            h = rng.standard_normal((3, 2))
            h /= np.linalg.norm(h)
            assert objective(data, fit.x_hat + 1e-3 * h) >= q0 - 1e-12

    def test_consistency_at_scale(self):
        # default study design, large sample, small noise: the fit lands
        # near the truth
        from eivtls.simulation import default_study_spec, generate_design, generate_noise

        spec = default_study_spec(sigma=0.1)
        m = 10_000
        a0 = generate_design(spec, m)
        ae, be = generate_noise(spec, m, 0)
        data = validate_dataset(a0 + ae, a0 @ spec.x0 + be)
        fit = solve_tls(data)
        assert np.linalg.norm(fit.x_hat - spec.x0) <= 0.05

    def test_input_equivariance(self, rng):
        model = random_true_model(rng, n=3, d=2, m=60)
        data = noisy_dataset(model, rng)
        base = solve_tls(data)
        q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
        rotated = validate_dataset(data.a @ q, data.b)
        fit = solve_tls(rotated)
        assert np.linalg.norm(fit.x_hat - q.T @ base.x_hat) <= 1e-8

    def test_output_equivariance(self, rng):
        model = random_true_model(rng, n=3, d=2, m=60)
        data = noisy_dataset(model, rng)
        base = solve_tls(data)
        v, _ = np.linalg.qr(rng.standard_normal((2, 2)))
        rotated = validate_dataset(data.a, data.b @ v)
        fit = solve_tls(rotated)
        assert np.linalg.norm(fit.x_hat - base.x_hat @ v) <= 1e-8

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SolverConfig(tol_score=0.0)
        with pytest.raises(ValueError):
            SolverConfig(max_iter=0)

    def test_unattainable_tolerance_reports_no_convergence(self, rng):
        model = random_true_model(rng, n=2, d=1, m=40)
        data = noisy_dataset(model, rng)
        fit = solve_tls(data, SolverConfig(tol_score=1e-300, max_iter=2))
        assert not fit.converged
        assert any("no convergence" in w for w in fit.warnings)
        assert fit.iterations == 2
        assert np.isfinite(fit.x_hat).all()

    def test_fd_check_flag_runs_clean(self, rng):
        # force one Newton step so the debug check actually executes
        model = random_true_model(rng, n=2, d=2, m=50)
        data = noisy_dataset(model, rng)
        fit = solve_tls(data, SolverConfig(tol_score=1e-15, max_iter=10, fd_check=True))
        assert not any("finite-difference" in w for w in fit.warnings)
