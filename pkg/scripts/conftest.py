import os
import sys

import numpy as np
import pytest

# Ensure project root on sys.path
PROJECT_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, PROJECT_ROOT)

from app.estimation import local_mle  # noqa: E402
from app.models import SiteData, SitePayload  # noqa: E402
from app.posterior import build_block, draw_posterior  # noqa: E402


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run Monte Carlo studies")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: Monte Carlo acceptance studies, enabled with --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def random_site(rng, n, p, site_id=1, beta=None, noise=1.0):
    X = rng.standard_normal((n, p))
    beta = np.linspace(0.5, -0.5, p) if beta is None else np.asarray(beta, dtype=float)
    y = X @ beta + noise * rng.standard_normal(n)
    return SiteData(X=X, y=y, site_id=site_id)


def make_payload(data, K=0, psi=100.0, seed=0):
    fit = local_mle(data)
    block = build_block(draw_posterior(fit, K, psi, seed), fit) if K > 0 else None
    return SitePayload(site_id=data.site_id, n=fit.n, p=fit.p, beta_hat=fit.beta_hat,
                       sigma_hat_sq=fit.sigma_hat_sq, block=block)


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def sites(rng):
    """Central site plus three remote sites, p=3, n=20"""
    return [random_site(rng, 20, 3, site_id=m) for m in range(1, 5)]
