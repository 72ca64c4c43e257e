# -*- coding: utf-8 -*-
"""
Облік диференційної приватності апостеріорних вибірок.

Для сусідніх наборів даних D1 і D2 = D1 + (x, y) з sigma^2 = 1 втрата приватності
K вибірок beta зводиться до скалярів: важеля c = x'S_1^{-1}x, залишку
r = y - x'beta_1 та K незалежних N(0, 1):

    D1 -> D2:  -(K/2) log(1+c) + 1/2 sum (c g^2 - 2 sqrt(c) g r / sqrt(psi) + r^2 c / ((1+c) psi))
    D2 -> D1:   (K/2) log(1+c) + 1/2 sum (-c/(1+c) g^2 + 2 sqrt(c/(1+c)) g r / ((1+c) sqrt(psi))
                                          + r^2 c / ((1+c)^2 psi))
"""

import logging
from typing import Iterator, List, Optional, Tuple

import numpy as np
from scipy.optimize import brentq
from scipy.stats import binomtest

from .errors import InvalidConfigError, ResolutionError
from .linalg import spd_solve
from .models import PrivacyBoundInputs, PrivacyEstimator, PrivacyReport, PrivacyScenario
from .posterior import derive_seed

logger = logging.getLogger(__name__)

MIN_TAIL_COUNT = 20
CHUNK_ELEMENTS = 2_000_000


def _check_delta(delta: float) -> None:
    if not 0 < delta < 1:
        raise InvalidConfigError(f"delta must be in (0, 1), got {delta}")


def epsilon_delta_bound(inp: PrivacyBoundInputs) -> Tuple[float, float]:
    """
    Межі epsilon для двох напрямків:
        forward = -(K/2)log(1+c) + Kc/2 + K xi2/2 + c log(1/delta) + c sqrt(K(1+2 lambda) log(1/delta))
        reverse = (K/2) log(1+c) + K xi2/2
    """
    _check_delta(inp.delta)
    K, c = inp.K, inp.c
    if c == 0:
        return 0.0, 0.0
    log_inv_delta = np.log(1.0 / inp.delta)
    forward = (-0.5 * K * np.log1p(c) + 0.5 * K * c + 0.5 * K * inp.xi2
               + c * log_inv_delta + c * np.sqrt(K * (1 + 2 * inp.lambda_priv) * log_inv_delta))
    reverse = 0.5 * K * np.log1p(c) + 0.5 * K * inp.xi2
    return float(forward), float(reverse)


def expected_epsilon_bound(K: int, c: float, psi: float, delta: float) -> float:
    """Межа для очікуваного epsilon_delta (усереднення за моделлю)"""
    _check_delta(delta)
    if c < 0 or psi <= 0:
        raise InvalidConfigError("c must be nonnegative and psi positive")
    if c == 0:
        return 0.0
    log_inv_delta = np.log(1.0 / delta)
    return float(-0.5 * K * np.log1p(c) + 0.5 * K * c + K * c / (2 * psi) + c * log_inv_delta
                 + c * np.sqrt(K * (1 + 2 * (1 + c) / (psi * c)) * log_inv_delta))


def realized_bound_inputs(X: np.ndarray, y: np.ndarray, x: np.ndarray, y_new: float,
                          K: int, psi: float, delta: float, sigma_sq: float = 1.0) -> PrivacyBoundInputs:
    """c, xi1, xi2 та lambda для конкретної пари сусідніх наборів даних"""
    S1 = X.T @ X
    beta1 = spd_solve(S1, X.T @ y, what="Gram matrix of D1")
    S2 = S1 + np.outer(x, x)
    beta2 = spd_solve(S2, X.T @ y + x * y_new, what="Gram matrix of D2")
    c = float(x @ spd_solve(S1, x, what="Gram matrix of D1"))
    d = beta2 - beta1
    scale = psi * sigma_sq
    resid = float(y_new - x @ beta1)
    return PrivacyBoundInputs(
        K=K, c=c, delta=delta, psi=psi,
        xi1=float(d @ S1 @ d) / scale,
        xi2=float(d @ S2 @ d) / scale,
        lambda_priv=resid ** 2 / (scale * c) if c > 0 else 0.0,
    )


def make_neighbors(n: int, p: int, c: float, rng: np.random.Generator):
    """
    D1: n рядків N(0, I), y з моделі з sigma^2 = 1.
    Додаткова точка x у випадковому напрямку масштабується до x'S_1^{-1}x = c.
    """
    X = rng.standard_normal((n, p))
    beta0 = rng.standard_normal(p)
    y = X @ beta0 + rng.standard_normal(n)
    u = rng.standard_normal(p)
    S1 = X.T @ X
    quad = float(u @ spd_solve(S1, u, what="Gram matrix of D1"))
    x = u * np.sqrt(c / quad)
    y_new = float(x @ beta0 + rng.standard_normal())
    return X, y, x, y_new


def _loss_chunks(rng: np.random.Generator, reps: int, K: int) -> Iterator[np.ndarray]:
    chunk = max(1, CHUNK_ELEMENTS // max(K, 1))
    done = 0
    while done < reps:
        size = min(chunk, reps - done)
        yield rng.standard_normal((size, K))
        done += size


def sample_losses(c: float, r: float, psi: float, K: int, reps: int,
                  rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Вибірки втрати приватності в обох напрямках"""
    forward = np.empty(reps)
    reverse = np.empty(reps)
    rho = c / (1 + c)
    fwd_shift = -0.5 * K * np.log1p(c) + 0.5 * K * r ** 2 * c / ((1 + c) * psi)
    rev_shift = 0.5 * K * np.log1p(c) + 0.5 * K * r ** 2 * c / ((1 + c) ** 2 * psi)
    pos = 0
    for g in _loss_chunks(rng, reps, K):
        size = g.shape[0]
        forward[pos:pos + size] = fwd_shift + 0.5 * (c * (g ** 2).sum(axis=1)
                                                     - 2 * np.sqrt(c) * r / np.sqrt(psi) * g.sum(axis=1))
        # окремі нормальні величини для зворотного напрямку
        h = rng.standard_normal((size, K))
        reverse[pos:pos + size] = rev_shift + 0.5 * (-rho * (h ** 2).sum(axis=1)
                                                     + 2 * np.sqrt(rho) * r / ((1 + c) * np.sqrt(psi)) * h.sum(axis=1))
        pos += size
    return forward, reverse


def hockey_stick_epsilon(losses: np.ndarray, delta: float) -> float:
    """Найменше eps >= 0 з E[(1 - exp(eps - L))_+] <= delta"""
    def excess(eps: float) -> float:
        return float(np.mean(np.maximum(0.0, -np.expm1(eps - losses)))) - delta

    if excess(0.0) <= 0:
        return 0.0
    upper = float(np.max(losses))
    return float(brentq(excess, 0.0, upper, xtol=1e-10))


def tail_quantile_epsilon(losses: np.ndarray, delta: float) -> float:
    """(1 - delta)-квантиль втрати; достатня, але грубіша умова"""
    return max(0.0, float(np.quantile(losses, 1.0 - delta)))


def _estimate(losses: np.ndarray, delta: float, estimator: PrivacyEstimator) -> float:
    if estimator == PrivacyEstimator.TAIL_QUANTILE:
        return tail_quantile_epsilon(losses, delta)
    return hockey_stick_epsilon(losses, delta)


def _check_scenario(scenario: PrivacyScenario) -> float:
    delta = scenario.effective_delta
    _check_delta(delta)
    if scenario.n < scenario.p:
        raise InvalidConfigError(f"n={scenario.n} < p={scenario.p}: Gram matrix of D1 would be singular")
    if scenario.K > 0 and scenario.reps * delta < MIN_TAIL_COUNT:
        raise ResolutionError(f"reps={scenario.reps} too small for delta={delta:.3g}: "
                              f"need reps * delta >= {MIN_TAIL_COUNT}")
    return delta


def _redraws(scenario: PrivacyScenario, delta: float):
    """По кожному перевибиранню даних: (eps_mc, межі, кількість хвостових подій)"""
    for redraw in range(scenario.redraws):
        rng = np.random.default_rng(derive_seed(scenario.seed, redraw))
        X, y, x, y_new = make_neighbors(scenario.n, scenario.p, scenario.c, rng)
        inputs = realized_bound_inputs(X, y, x, y_new, scenario.K, scenario.psi, delta)
        r = float(y_new - x @ spd_solve(X.T @ X, X.T @ y, what="Gram matrix of D1"))
        forward, reverse = sample_losses(inputs.c, r, scenario.psi, scenario.K, scenario.reps, rng)
        eps = max(_estimate(forward, delta, scenario.estimator),
                  _estimate(reverse, delta, scenario.estimator))
        tail = max(int((forward > eps).sum()), int((reverse > eps).sum()))
        yield eps, inputs, tail


def mc_min_epsilon(scenario: PrivacyScenario) -> float:
    """Монте-Карло мінімального epsilon, усереднене за перевибираннями даних"""
    delta = _check_scenario(scenario)
    if scenario.K == 0:
        return 0.0
    values = [eps for eps, _, _ in _redraws(scenario, delta)]
    return float(np.mean(values))


def privacy_report(scenario: PrivacyScenario) -> PrivacyReport:
    """Емпіричне epsilon, теоретичні межі та діагностика домінування"""
    delta = _check_scenario(scenario)
    expected = expected_epsilon_bound(scenario.K, scenario.c, scenario.psi, delta)
    if scenario.K == 0:
        params = PrivacyBoundInputs(K=0, c=scenario.c, delta=delta, psi=scenario.psi)
        forward, reverse = epsilon_delta_bound(params)
        return PrivacyReport(eps_forward=forward, eps_reverse=reverse, eps_expected=expected,
                             eps_mc=0.0, params=params)

    eps_values: List[float] = []
    bounds: List[Tuple[float, float]] = []
    violations = 0
    tail_total = 0
    params: Optional[PrivacyBoundInputs] = None
    for eps, inputs, tail in _redraws(scenario, delta):
        fwd, rev = epsilon_delta_bound(inputs)
        if max(fwd, rev) < eps:
            violations += 1
            logger.warning(f"Bound below empirical epsilon: bound={max(fwd, rev):.4f}, eps_mc={eps:.4f}")
        eps_values.append(eps)
        bounds.append((fwd, rev))
        tail_total += tail
        params = params or inputs

    trials = scenario.reps * scenario.redraws
    ci = binomtest(min(tail_total, trials), trials).proportion_ci(confidence_level=0.95, method="wilson")
    fwd_mean, rev_mean = np.mean(bounds, axis=0)
    logger.info(f"Privacy MC: n={scenario.n}, p={scenario.p}, K={scenario.K}, c={scenario.c:.4g}, "
                f"eps_mc={np.mean(eps_values):.4f}, violations={violations}/{scenario.redraws}")
    return PrivacyReport(eps_forward=float(fwd_mean), eps_reverse=float(rev_mean), eps_expected=expected,
                         eps_mc=float(np.mean(eps_values)), params=params,
                         dominance_violations=violations, tail_probability_ci=[float(ci.low), float(ci.high)])
