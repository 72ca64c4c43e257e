import numpy as np
import pytest
from scipy.integrate import quad
from scipy.optimize import minimize
from scipy.stats import wishart

from app.cedar import cedar_fit, e_step, m_step, marginal_loglik, sparse_beta_step
from app.errors import DegeneratePosteriorError, DimensionMismatchError
from app.estimation import local_mle
from app.models import CedarOptions, EmState, EstepMode, SiteData, SitePayload
from conftest import make_payload, random_site


def _state(central_fit, payloads, rng):
    p = central_fit.p
    A = rng.standard_normal((p, p))
    return EmState(beta=rng.standard_normal(p), sigma_sq=0.8, Sigma=A @ A.T + p * np.eye(p),
                   S_hat=[central_fit.S] * (len(payloads) + 1))


@pytest.mark.parametrize("K", [0, 2, 3])
def test_direct_and_woodbury_e_steps_agree(rng, K):
    sites = [random_site(rng, 15, 4, site_id=m) for m in (1, 2, 3)]
    central = local_mle(sites[0])
    payloads = [make_payload(s, K=K, seed=m) for m, s in enumerate(sites[1:])]
    state = _state(central, payloads, rng)
    direct = e_step(state, payloads, EstepMode.DIRECT)
    woodbury = e_step(state, payloads, EstepMode.WOODBURY)
    for a, b in zip(direct, woodbury):
        np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-10)
    np.testing.assert_array_equal(direct[0], central.S)


def test_imputed_grams_are_symmetric_positive_definite(rng):
    sites = [random_site(rng, 12, 3, site_id=m) for m in (1, 2)]
    central = local_mle(sites[0])
    payloads = [make_payload(sites[1], K=10, seed=2)]
    S_hat = e_step(_state(central, payloads, rng), payloads)
    for S in S_hat:
        np.testing.assert_array_equal(S, S.T)
        assert np.linalg.eigvalsh(S).min() > 0


def test_m_step_closed_form(rng):
    sites = [random_site(rng, 25, 2, site_id=m) for m in (1, 2, 3)]
    fits = [local_mle(s) for s in sites]
    S_hat = [f.S for f in fits]
    state = EmState(beta=np.zeros(2), sigma_sq=1.0, Sigma=np.eye(2), S_hat=S_hat)
    beta, sigma_sq, Sigma = m_step(state, fits)
    X = np.vstack([s.X for s in sites])
    y = np.concatenate([s.y for s in sites])
    np.testing.assert_allclose(beta, np.linalg.lstsq(X, y, rcond=None)[0], rtol=1e-10)
    rss = float(np.sum((y - X @ beta) ** 2))
    assert sigma_sq == pytest.approx(rss / 75, rel=1e-10)
    np.testing.assert_allclose(Sigma, X.T @ X / 75, rtol=1e-12)


@pytest.mark.parametrize("p", [1, 2, 4])
@pytest.mark.parametrize("M", [2, 4, 8])
@pytest.mark.parametrize("K", [0, 4, 16])
def test_em_ascends_marginal_likelihood(p, M, K):
    rng = np.random.default_rng(1000 * p + 10 * M + K)
    sites = [random_site(rng, max(2 * p, 6), p, site_id=m) for m in range(1, M + 1)]
    payloads = [make_payload(s, K=K, seed=s.site_id) for s in sites[1:]]
    fit = cedar_fit(sites[0], payloads, CedarOptions(max_iters=200))
    trace = np.array(fit.loglik_trace)
    steps = np.diff(trace)
    assert np.all(steps >= -1e-8 * np.maximum(1.0, np.abs(trace[:-1])))
    assert fit.final_loglik == pytest.approx(trace[-1])


def test_identical_sites_return_local_ols(rng):
    data = random_site(rng, 30, 3)
    payloads = [make_payload(SiteData(X=data.X, y=data.y, site_id=m)) for m in (2, 3, 4)]
    fit = cedar_fit(data, payloads)
    np.testing.assert_allclose(fit.beta, local_mle(data).beta_hat, rtol=1e-10, atol=1e-12)


def test_single_site_reduces_to_local_fit(rng):
    data = random_site(rng, 40, 3)
    local = local_mle(data)
    fit = cedar_fit(data, [])
    np.testing.assert_allclose(fit.beta, local.beta_hat, rtol=1e-12)
    assert fit.sigma_sq == pytest.approx(local.sigma_hat_sq, rel=1e-12)
    np.testing.assert_allclose(fit.Sigma, local.S / 40, rtol=1e-12)
    assert fit.converged and fit.iterations <= 2
    assert fit.n_total == 40


def test_constants_only_shift_the_single_site_loglik(rng):
    data = random_site(rng, 30, 2)
    local = local_mle(data)
    beta, Sigma = np.array([0.2, -0.1]), np.eye(2)
    plain = marginal_loglik(beta, 1.3, Sigma, local, [])
    full = marginal_loglik(beta, 1.3, Sigma, local, [], include_constants=True)
    assert full - plain == pytest.approx(0.5 * (30 - 2) * np.linalg.slogdet(local.S)[1], rel=1e-10)


def test_local_ols_maximizes_single_site_loglik_in_beta(rng):
    local = local_mle(random_site(rng, 30, 2))
    best = marginal_loglik(local.beta_hat, 1.0, np.eye(2), local, [])
    for shift in ([0.01, 0.0], [0.0, -0.01]):
        assert marginal_loglik(local.beta_hat + np.array(shift), 1.0, np.eye(2), local, []) < best


@pytest.mark.parametrize("M", [2, 3])
def test_matches_direct_maximization_for_scalar_model(M):
    rng = np.random.default_rng(M)
    sites = [random_site(rng, 8, 1, site_id=m, beta=[0.7]) for m in range(1, M + 1)]
    central = local_mle(sites[0])
    payloads = [make_payload(s) for s in sites[1:]]
    fit = cedar_fit(central, payloads, CedarOptions(tol=1e-13, max_iters=20000))

    def negative(theta):
        beta, log_s2, log_sigma = theta
        return -marginal_loglik(np.array([beta]), np.exp(log_s2), np.array([[np.exp(log_sigma)]]),
                                central, payloads)

    start = np.array([fit.beta[0] + 0.05, np.log(fit.sigma_sq) + 0.05, np.log(fit.Sigma[0, 0]) - 0.05])
    res = minimize(negative, start, method="Nelder-Mead",
                   options=dict(xatol=1e-10, fatol=1e-14, maxiter=20000, maxfev=40000))
    assert -res.fun <= fit.final_loglik + 1e-8
    np.testing.assert_allclose(fit.beta[0], res.x[0], atol=1e-5)
    np.testing.assert_allclose(np.log(fit.sigma_sq), res.x[1], atol=1e-5)


def test_dimension_mismatch(rng):
    central = random_site(rng, 20, 2)
    other = make_payload(random_site(rng, 20, 3, site_id=2))
    with pytest.raises(DimensionMismatchError):
        cedar_fit(central, [other])


def test_duplicate_site_ids(rng):
    central = random_site(rng, 20, 2)
    payload = make_payload(random_site(rng, 20, 2, site_id=2))
    with pytest.raises(DimensionMismatchError):
        cedar_fit(central, [payload, payload])


def test_all_exact_fits_are_degenerate(rng):
    X = rng.standard_normal((10, 2))
    central = SiteData(X=X, y=X @ np.ones(2), site_id=1)
    payload = SitePayload(site_id=2, n=10, p=2, beta_hat=np.ones(2), sigma_hat_sq=0.0)
    with pytest.raises(DegeneratePosteriorError):
        cedar_fit(central, [payload])


def test_large_penalty_zeroes_coefficients(rng):
    sites = [random_site(rng, 20, 3, site_id=m) for m in (1, 2, 3)]
    payloads = [make_payload(s, K=4, seed=s.site_id) for s in sites[1:]]
    fit = cedar_fit(sites[0], payloads, CedarOptions(penalty_lambda=1e6))
    np.testing.assert_array_equal(fit.beta, 0.0)
    assert fit.penalty_lambda == 1e6


def test_order_of_payloads_does_not_matter(rng):
    sites = [random_site(rng, 20, 2, site_id=m) for m in (1, 2, 3, 4)]
    payloads = [make_payload(s, K=2, seed=s.site_id) for s in sites[1:]]
    a = cedar_fit(sites[0], payloads)
    b = cedar_fit(sites[0], payloads[::-1])
    np.testing.assert_array_equal(a.beta, b.beta)


def _scalar_state(beta, sigma_sq=1.0, Sigma=1.0):
    return EmState(beta=np.array([beta]), sigma_sq=sigma_sq, Sigma=np.array([[Sigma]]), S_hat=[np.array([[1.0]])])


@pytest.mark.parametrize("beta_hat,n,expected", [(0.3, 4, 5.0), (1.3, 1, 1.0)])
def test_scalar_e_step_by_hand(beta_hat, n, expected):
    # (n + 1) / (1 / Sigma + a^2) with a = beta_hat - beta
    payload = SitePayload(site_id=2, n=n, p=1, beta_hat=np.array([beta_hat]), sigma_hat_sq=1.0)
    for mode in (EstepMode.DIRECT, EstepMode.WOODBURY):
        S_hat = e_step(_scalar_state(0.3), [payload], mode)
        assert S_hat[1][0, 0] == pytest.approx(expected, rel=1e-12)


def test_imputed_gram_is_the_wishart_mean(rng):
    sites = [random_site(rng, 12, 3, site_id=m) for m in (1, 2)]
    central = local_mle(sites[0])
    payload = make_payload(sites[1], K=2, seed=5)
    state = _state(central, [payload], rng)
    S_hat = e_step(state, [payload])[1]

    a = (payload.beta_hat - state.beta) / np.sqrt(state.sigma_sq)
    precision = np.linalg.inv(state.Sigma) + np.outer(a, a) + payload.block.normalized_gram()
    nu = payload.n + payload.K + 1
    draws = wishart(df=nu, scale=np.linalg.inv(precision)).rvs(size=200_000, random_state=np.random.default_rng(7))
    mc_mean = draws.mean(axis=0) / nu
    assert np.linalg.norm(S_hat / nu - mc_mean) <= 0.01 * np.linalg.norm(S_hat / nu)


def test_scalar_marginal_matches_quadrature(rng):
    sites = [random_site(rng, 8, 1, site_id=m, beta=[0.4]) for m in (1, 2)]
    central = local_mle(sites[0])
    payload = make_payload(sites[1])
    n1, n2 = central.n, payload.n
    N = n1 + n2
    S1 = float(central.S[0, 0])

    def by_quadrature(beta, sigma_sq, Sigma):
        a_sq = (payload.beta_hat[0] - beta) ** 2 / sigma_sq
        # beta_hat_2 | S_2 contributes S^(1/2), Wishart(Sigma, n_2) contributes S^((n_2 - 2)/2)
        integral, _ = quad(lambda s: np.exp(0.5 * (n2 - 1) * np.log(s) - 0.5 * s * (a_sq + 1.0 / Sigma)), 0, np.inf,
                           epsabs=0, epsrel=1e-12, limit=200)
        observed = (-0.5 * N * np.log(sigma_sq)
                    - 0.5 * (n1 * central.sigma_hat_sq + n2 * payload.sigma_hat_sq) / sigma_sq
                    - 0.5 * N * np.log(Sigma)
                    - 0.5 * (central.beta_hat[0] - beta) ** 2 * S1 / sigma_sq
                    - 0.5 * S1 / Sigma)
        return observed + np.log(integral)

    points = [(0.4, 1.0, 1.0), (0.1, 0.7, 1.4), (0.9, 1.8, 0.6)]
    gaps = [marginal_loglik(np.array([b]), s2, np.array([[S]]), central, [payload]) - by_quadrature(b, s2, S)
            for b, s2, S in points]
    np.testing.assert_allclose(gaps, gaps[0], rtol=0, atol=1e-6 * abs(gaps[0]) + 1e-9)


@pytest.mark.slow
def test_em_ascent_over_seeded_instances():
    for seed in range(100):
        rng = np.random.default_rng(seed)
        p = (1, 4)[seed % 2]
        M = (2, 8)[(seed // 2) % 2]
        K = (0, 4)[(seed // 4) % 2]
        sites = [random_site(rng, 3 * p + 4, p, site_id=m) for m in range(1, M + 1)]
        payloads = [make_payload(s, K=K, seed=seed * 100 + s.site_id) for s in sites[1:]]
        trace = np.array(cedar_fit(sites[0], payloads, CedarOptions(max_iters=300)).loglik_trace)
        assert np.all(np.diff(trace) >= -1e-8 * np.maximum(1.0, np.abs(trace[:-1]))), f"seed {seed}"


def test_unpenalised_proximal_step_is_the_closed_form_update(rng):
    sites = [random_site(rng, 30, 4, site_id=m) for m in (1, 2, 3)]
    central = local_mle(sites[0])
    payloads = [make_payload(s, K=4, seed=s.site_id) for s in sites[1:]]
    state = _state(central, payloads, rng)
    expected = EmState(beta=state.beta, sigma_sq=state.sigma_sq, Sigma=state.Sigma,
                       S_hat=e_step(state, payloads))
    closed_form, _, _ = m_step(expected, [central] + payloads)
    np.testing.assert_allclose(sparse_beta_step(expected, [central] + payloads, 0.0), closed_form, atol=1e-8)
