import numpy as np
import pytest

from app.errors import InvalidConfigError, ResolutionError
from app.models import PrivacyBoundInputs, PrivacyEstimator, PrivacyScenario
from app.privacy import (
    epsilon_delta_bound,
    expected_epsilon_bound,
    hockey_stick_epsilon,
    make_neighbors,
    mc_min_epsilon,
    privacy_report,
    realized_bound_inputs,
    sample_losses,
    tail_quantile_epsilon,
)


def test_expected_bound_value():
    assert expected_epsilon_bound(4, 0.25, 100.0, 1 / 16) == pytest.approx(1.625, abs=1e-3)


def test_zero_leverage_leaks_nothing():
    assert epsilon_delta_bound(PrivacyBoundInputs(K=4, c=0.0, delta=0.1)) == (0.0, 0.0)
    assert expected_epsilon_bound(4, 0.0, 100.0, 0.1) == 0.0


@pytest.mark.parametrize("delta", [0.0, 1.0, 1.5])
def test_delta_must_be_a_probability(delta):
    with pytest.raises(InvalidConfigError):
        epsilon_delta_bound(PrivacyBoundInputs(K=4, c=0.5, delta=delta))


def test_bound_grows_with_k():
    small = epsilon_delta_bound(PrivacyBoundInputs(K=4, c=0.25, delta=0.01, xi2=0.01, lambda_priv=0.5))
    large = epsilon_delta_bound(PrivacyBoundInputs(K=16, c=0.25, delta=0.01, xi2=0.01, lambda_priv=0.5))
    assert large[0] > small[0] and large[1] > small[1]


def test_neighbors_have_requested_leverage(rng):
    X, y, x, y_new = make_neighbors(32, 4, 0.125, rng)
    inputs = realized_bound_inputs(X, y, x, y_new, K=4, psi=100.0, delta=1 / 32)
    assert inputs.c == pytest.approx(0.125, rel=1e-10)
    assert inputs.xi2 >= 0 and inputs.lambda_priv >= 0
    assert inputs.xi1 <= inputs.xi2


def test_tail_quantile_dominates_hockey_stick(rng):
    forward, reverse = sample_losses(0.25, 0.8, 100.0, 4, 50_000, rng)
    for losses in (forward, reverse):
        assert tail_quantile_epsilon(losses, 0.01) >= hockey_stick_epsilon(losses, 0.01)


def test_no_draws_no_loss():
    assert mc_min_epsilon(PrivacyScenario(n=16, p=4, K=0, c=0.25, reps=10)) == 0.0


def test_too_few_replicates_is_an_error():
    with pytest.raises(ResolutionError):
        mc_min_epsilon(PrivacyScenario(n=16, p=4, K=4, c=0.25, reps=100))


def test_singular_design_rejected():
    with pytest.raises(InvalidConfigError):
        mc_min_epsilon(PrivacyScenario(n=3, p=4, K=4, c=1.0, reps=1000))


def test_monte_carlo_is_reproducible():
    scenario = PrivacyScenario(n=16, p=4, K=4, c=0.25, reps=20_000, redraws=3, seed=9)
    assert mc_min_epsilon(scenario) == mc_min_epsilon(scenario)


@pytest.mark.parametrize("p,K,c,expected", [(4, 4, 1.0, 0.57), (4, 4, 0.25, 0.25), (4, 4, 1 / 16, 0.09)])
def test_reproduces_tabulated_privacy_levels(p, K, c, expected):
    n = int(round(p / c))
    scenario = PrivacyScenario(n=n, p=p, K=K, c=c, psi=100.0, reps=50_000, redraws=10, seed=1)
    assert mc_min_epsilon(scenario) == pytest.approx(expected, rel=0.3)


def test_report_has_no_dominance_violations():
    report = privacy_report(PrivacyScenario(n=16, p=4, K=4, c=0.25, reps=20_000, redraws=10, seed=3))
    assert report.dominance_violations == 0
    assert max(report.eps_forward, report.eps_reverse) >= report.eps_mc
    low, high = report.tail_probability_ci
    assert 0.0 <= low <= high <= 1.0
    assert report.params.c == pytest.approx(0.25)


def test_tail_quantile_estimator_is_more_conservative():
    base = dict(n=16, p=4, K=4, c=0.25, reps=20_000, redraws=3, seed=2)
    hockey = mc_min_epsilon(PrivacyScenario(**base))
    quantile = mc_min_epsilon(PrivacyScenario(estimator=PrivacyEstimator.TAIL_QUANTILE, **base))
    assert quantile >= hockey


@pytest.mark.slow
@pytest.mark.parametrize("p,K,c,expected", [
    (4, 16, 1.0, 3.38), (4, 16, 1 / 4, 0.90), (16, 4, 1 / 2, 1.73),
    (16, 16, 1.0, 7.88), (16, 16, 1 / 8, 1.00), (16, 16, 1 / 16, 0.54),
])
def test_reproduces_remaining_privacy_levels(p, K, c, expected):
    n = int(round(p / c))
    scenario = PrivacyScenario(n=n, p=p, K=K, c=c, psi=100.0, reps=100_000, redraws=20, seed=1)
    assert mc_min_epsilon(scenario) == pytest.approx(expected, rel=0.3)


@pytest.mark.slow
def test_bound_dominates_on_every_cell():
    from app.harness import PRIVACY_GRID_C, PRIVACY_GRID_ROWS

    for p, K in PRIVACY_GRID_ROWS:
        for c in PRIVACY_GRID_C:
            n = int(round(p / c))
            report = privacy_report(PrivacyScenario(n=n, p=p, K=K, c=c, reps=20_000, redraws=1000, seed=4))
            assert report.dominance_violations == 0


def test_losses_are_centered_like_the_divergence(rng):
    # forward loss has mean equal to the KL divergence, which is nonnegative
    forward, reverse = sample_losses(0.5, 0.0, 100.0, 8, 200_000, rng)
    assert forward.mean() > -0.01
    assert reverse.mean() > -0.01
    assert np.isfinite(forward).all()


def test_bound_without_posterior_samples():
    forward, reverse = epsilon_delta_bound(PrivacyBoundInputs(K=0, c=0.5, xi2=0.3, lambda_priv=2.0, delta=0.01))
    assert forward == pytest.approx(0.5 * np.log(100.0), rel=1e-12)
    assert reverse == 0.0


def test_bound_hand_value():
    # -2 log 1.25 + 0.5 + 0.02 + 0.25 log 16 + 0.25 sqrt(12 log 16)
    forward, reverse = epsilon_delta_bound(PrivacyBoundInputs(K=4, c=0.25, xi2=0.01, lambda_priv=1.0, delta=1 / 16))
    assert forward == pytest.approx(2.208887, abs=1e-5)
    assert reverse == pytest.approx(0.466287, abs=1e-5)
