import numpy as np
import pytest

from hawkes_epm.polya_gamma import pg_expectation, pg_variance, sample_pg


def series_moments(b, c, n=2_000_000):
    # PG(b, c) as a weighted sum of Gamma(b, 1) variables
    k = np.arange(1, n + 1, dtype=np.float64)
    d = (k - 0.5) ** 2 + c ** 2 / (4 * np.pi ** 2)
    mean = b * np.sum(1 / d) / (2 * np.pi ** 2)
    var = b * np.sum(1 / d ** 2) / (4 * np.pi ** 4)
    return mean, var


@pytest.mark.parametrize("b,c", [(1, 0.0), (2, 2.0), (1, 0.5), (5, 2.0), (0.3, 7.0)])
def test_closed_forms_match_series(b, c):
    mean, var = series_moments(b, c)
    assert pg_expectation(b, c) == pytest.approx(mean, rel=1e-6)
    assert pg_variance(b, c) == pytest.approx(var, rel=1e-6)


def test_small_c_branches_are_continuous():
    for c in (0.99e-4, 1.01e-4, 0.99e-2, 1.01e-2):
        mean, var = series_moments(1.0, c)
        assert pg_expectation(1.0, c) == pytest.approx(mean, rel=1e-6)
        assert pg_variance(1.0, c) == pytest.approx(var, rel=1e-6)


def test_expectation_values():
    assert pg_expectation(1, 0) == 0.25
    assert pg_expectation(2, 2) == pytest.approx(0.3807970, abs=1e-7)
    assert pg_expectation(2, -2) == pg_expectation(2, 2)


def test_large_c_variance_is_finite():
    v = pg_variance(1.0, 500.0)
    assert np.isfinite(v) and v == pytest.approx(1 / (2 * 500.0 ** 3), rel=1e-9)


@pytest.mark.parametrize("b", [0, -1.0, np.nan])
def test_rejects_nonpositive_shape(b):
    with pytest.raises(ValueError):
        sample_pg(b, 1.0, np.random.default_rng(0))
    with pytest.raises(ValueError):
        pg_expectation(b, 1.0)


def test_sample_mean_limits():
    rng = np.random.default_rng(0)
    x = sample_pg(np.ones(10 ** 6), 0.0, rng)
    assert x.mean() == pytest.approx(0.25, rel=0.01)
    x = sample_pg(np.full(10 ** 6, 2.0), 2.0, rng)
    assert x.mean() == pytest.approx(0.3807970, rel=0.01)


@pytest.mark.parametrize("b", [1, 2, 5])
@pytest.mark.parametrize("c", [0.5, 2.0])
def test_sample_moments(b, c):
    rng = np.random.default_rng(b * 10 + int(c * 2))
    x = sample_pg(np.full(10 ** 6, float(b)), c, rng)
    mean, var = series_moments(b, c)
    assert x.mean() == pytest.approx(mean, rel=0.01)
    assert x.var() == pytest.approx(var, rel=0.05)
    assert np.all(x > 0)


def test_scalar_and_broadcast_shapes():
    rng = np.random.default_rng(1)
    assert isinstance(sample_pg(1.0, 0.3, rng), float)
    assert sample_pg(np.ones((2, 3)), np.zeros(3), rng).shape == (2, 3)
