import numpy as np
import pytest

from eivtls import make_true_model, validate_dataset


def random_true_model(rng, n=None, d=None, m=50, sigma2=0.09):
    """A random well-conditioned true model for solver tests."""
    n = int(rng.integers(1, 6)) if n is None else n
    d = int(rng.integers(1, 4)) if d is None else d
    a0 = rng.standard_normal((m, n)) + rng.uniform(-0.5, 0.5, n)
    x0 = rng.uniform(-1.0, 1.0, (n, d))
    return make_true_model(a0, x0, sigma2)


def noisy_dataset(model, rng):
    """Gaussian-noise observation of a true model."""
    sigma = np.sqrt(model.sigma2)
    a = model.a0 + rng.standard_normal(model.a0.shape) * sigma
    b = model.b0 + rng.standard_normal(model.b0.shape) * sigma
    return validate_dataset(a, b)


@pytest.fixture
def rng():
    return np.random.default_rng(20231101)
