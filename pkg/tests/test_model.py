import numpy as np
import pytest

from eivtls import (
    DimensionMismatchError,
    NoiseFamily,
    NonFiniteError,
    NonPositiveVarianceError,
    SpecInvalidError,
    TooFewRowsError,
    make_true_model,
    validate_dataset,
)


class TestValidateDataset:
    def test_accepts_matching_pair(self):
        data = validate_dataset(np.ones((5, 2)), np.ones((5, 1)))
        assert (data.dims.m, data.dims.n, data.dims.d) == (5, 2, 1)

    def test_row_count_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            validate_dataset(np.ones((5, 2)), np.ones((4, 1)))

    def test_too_few_rows(self):
        with pytest.raises(TooFewRowsError):
            validate_dataset(np.ones((2, 2)), np.ones((2, 1)))

    def test_non_finite(self):
        a = np.ones((5, 2))
        a[3, 1] = np.nan
        with pytest.raises(NonFiniteError):
            validate_dataset(a, np.ones((5, 1)))
        b = np.ones((5, 1))
        b[0, 0] = np.inf
        with pytest.raises(NonFiniteError):
            validate_dataset(np.ones((5, 2)), b)

    def test_arrays_are_frozen(self):
        data = validate_dataset(np.ones((5, 2)), np.ones((5, 1)))
        with pytest.raises(ValueError):
            data.a[0, 0] = 2.0


class TestMakeTrueModel:
    def test_identity_design(self):
        model = make_true_model(np.eye(2), [[1.0], [2.0]], 0.04)
        assert np.array_equal(model.b0, np.array([[1.0], [2.0]]))

    def test_zero_variance_rejected(self):
        with pytest.raises(NonPositiveVarianceError):
            make_true_model(np.eye(2), [[1.0], [2.0]], 0.0)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            make_true_model(np.ones((3, 2)), np.ones((3, 1)), 1.0)

    def test_noise_free_dataset_is_exact(self, rng):
        a0 = rng.standard_normal((30, 3))
        x0 = rng.uniform(-1, 1, (3, 2))
        model = make_true_model(a0, x0, 0.25)
        data = model.noise_free_dataset()
        assert np.max(np.abs(data.b - data.a @ x0)) == 0.0


class TestNoiseFamily:
    def test_unknown_kind_rejected(self):
        with pytest.raises(SpecInvalidError):
            NoiseFamily("laplace")

    def test_student_t_needs_df(self):
        with pytest.raises(SpecInvalidError):
            NoiseFamily("student-t")
        with pytest.raises(SpecInvalidError):
            NoiseFamily("student-t", df=8)

    def test_df_only_for_student_t(self):
        with pytest.raises(SpecInvalidError):
            NoiseFamily("gaussian", df=10)

    @pytest.mark.parametrize(
        "family",
        [NoiseFamily("gaussian"), NoiseFamily("student-t", df=9), NoiseFamily("uniform")],
        ids=["gaussian", "t9", "uniform"],
    )
    def test_unit_moments(self, family):
        draws = family.sample(np.random.default_rng(99), 1_000_000)
        assert abs(draws.mean()) < 4e-3
        assert abs(draws.var() - 1.0) < 0.01

    def test_uniform_is_bounded(self):
        draws = NoiseFamily("uniform").sample(np.random.default_rng(0), 10_000)
        assert np.max(np.abs(draws)) <= np.sqrt(3.0)
