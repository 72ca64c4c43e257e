import numpy as np
import pytest
from scipy.stats import chi2, kstest

from app.errors import RankDeficiencyError
from app.estimation import gram_factor, local_mle, sufficient_stats
from app.models import SiteData
from conftest import random_site


def test_local_mle_matches_least_squares(rng):
    data = random_site(rng, 50, 4)
    fit = local_mle(data)
    beta, rss, _, _ = np.linalg.lstsq(data.X, data.y, rcond=None)
    np.testing.assert_allclose(fit.beta_hat, beta, rtol=1e-10, atol=1e-12)
    assert fit.sigma_hat_sq == pytest.approx(float(rss[0]) / 50, rel=1e-10)
    np.testing.assert_array_equal(fit.S, fit.S.T)
    assert (fit.n, fit.p, fit.site_id) == (50, 4, 1)


def test_fewer_rows_than_features_names_site(rng):
    data = random_site(rng, 2, 3, site_id=7)
    with pytest.raises(RankDeficiencyError) as err:
        local_mle(data)
    assert err.value.site_id == 7
    assert "site 7" in str(err.value)


def test_zero_column_is_rank_deficient(rng):
    X = rng.standard_normal((10, 3))
    X[:, 1] = 0.0
    data = SiteData(X=X, y=rng.standard_normal(10), site_id=3)
    with pytest.raises(RankDeficiencyError):
        gram_factor(data)


def test_sufficient_stats_add_up_to_pooled(rng):
    data = random_site(rng, 30, 2)
    first = SiteData(X=data.X[:12], y=data.y[:12], site_id=1)
    second = SiteData(X=data.X[12:], y=data.y[12:], site_id=2)
    pooled = sufficient_stats(first) + sufficient_stats(second)
    whole = sufficient_stats(data)
    np.testing.assert_allclose(pooled.S, whole.S, rtol=1e-12)
    np.testing.assert_allclose(pooled.Xty, whole.Xty, rtol=1e-12)
    assert pooled.yty == pytest.approx(whole.yty, rel=1e-12)
    assert pooled.n == 30


@pytest.mark.parametrize("seed", range(40))
def test_exactly_collinear_columns_are_rank_deficient(seed):
    rng = np.random.default_rng(seed)
    x, z = rng.standard_normal(20), rng.standard_normal(20)
    data = SiteData(X=np.column_stack([x, 3 * x, z]), y=rng.standard_normal(20), site_id=5)
    with pytest.raises(RankDeficiencyError) as err:
        local_mle(data)
    assert err.value.site_id == 5


def test_scaled_variance_follows_chi_square():
    rng = np.random.default_rng(11)
    n, p, sigma0_sq = 10, 3, 2.0
    scaled = []
    for _ in range(2000):
        X = rng.standard_normal((n, p))
        y = X @ np.array([1.0, 0.0, -1.0]) + np.sqrt(sigma0_sq) * rng.standard_normal(n)
        scaled.append(n * local_mle(SiteData(X=X, y=y, site_id=1)).sigma_hat_sq / sigma0_sq)
    assert np.mean(scaled) == pytest.approx(n - p, rel=0.05)
    assert kstest(scaled, chi2(df=n - p).cdf).pvalue > 0.01
