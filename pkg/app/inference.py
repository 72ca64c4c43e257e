# -*- coding: utf-8 -*-
"""
Статистичні висновки для агрегованої оцінки: тести Вальда, довірчі інтервали,
оцінки асимптотичної дисперсії та теоретичні значення для перевірок.

Індекси коефіцієнтів починаються з 0.
"""

import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import norm

from .errors import EstimatorUnavailableError, InvalidConfigError, NumericalError
from .linalg import spd_inverse, symmetrize
from .models import AsymptoticVariance, CedarFit, Regime, SitePayload, Sided, WaldResult

logger = logging.getLogger(__name__)

FIXED_POINT_TOL = 1e-12
FIXED_POINT_MAX_ITERS = 10_000


def _check_index(j: int, p: int) -> None:
    if not 0 <= j < p:
        raise InvalidConfigError(f"coefficient index {j} out of range for p={p}")


def _check_alpha(alpha: float) -> None:
    if not 0 < alpha <= 1:
        raise InvalidConfigError(f"alpha must be in (0, 1], got {alpha}")


def wald_from_covariance(beta: np.ndarray, cov: np.ndarray, j: int, b0: float = 0.0,
                         alpha: float = 0.05, sided: Sided = Sided.TWO_SIDED) -> WaldResult:
    """W_j = (beta_j - b0) / sqrt(cov_jj) з нормальним p-значенням"""
    _check_index(j, beta.size)
    _check_alpha(alpha)
    var = float(cov[j, j])
    if not var > 0:
        raise NumericalError(f"variance of coefficient {j} is not positive ({var})")
    stat = float(beta[j] - b0) / np.sqrt(var)
    if sided == Sided.GREATER:
        p_value = float(norm.sf(stat))
        reject = stat > norm.ppf(1 - alpha)
    else:
        p_value = float(min(1.0, 2 * norm.sf(abs(stat))))
        reject = abs(stat) > norm.ppf(1 - alpha / 2)
    return WaldResult(statistic=stat, p_value=p_value, reject=bool(reject), j=j,
                      null_value=b0, alpha=alpha, sided=sided)


def beta_covariance(fit: CedarFit, avar: Optional[AsymptoticVariance] = None) -> np.ndarray:
    """
    Коваріація beta_hat:
      homogeneous: sigma^2 Sigma^{-1} / N
      main:        sigma^2 Sigma^{-1} Sigma* Sigma^{-1} / N
      smallK:      sigma^2 Sigma* / N
    """
    N = fit.n_total
    if avar is None or avar.regime == Regime.HOMOGENEOUS:
        return fit.sigma_sq * spd_inverse(fit.Sigma, what="Sigma") / N
    if avar.regime == Regime.SMALL_K:
        return fit.sigma_sq * np.asarray(avar.Sigma_star) / N
    Sigma_inv = spd_inverse(fit.Sigma, what="Sigma")
    return symmetrize(fit.sigma_sq * Sigma_inv @ avar.Sigma_star @ Sigma_inv / N)


def wald_statistic(fit: CedarFit, j: int, b0: float = 0.0, alpha: float = 0.05,
                   sided: Sided = Sided.TWO_SIDED,
                   avar: Optional[AsymptoticVariance] = None) -> WaldResult:
    return wald_from_covariance(fit.beta, beta_covariance(fit, avar), j, b0, alpha, sided)


def wald_table(fit: CedarFit, b0: float = 0.0, alpha: float = 0.05, sided: Sided = Sided.TWO_SIDED,
               avar: Optional[AsymptoticVariance] = None) -> List[WaldResult]:
    cov = beta_covariance(fit, avar)
    return [wald_from_covariance(fit.beta, cov, j, b0, alpha, sided) for j in range(fit.p)]


def confidence_interval(fit: CedarFit, j: int, alpha: float = 0.05,
                        avar: Optional[AsymptoticVariance] = None) -> Tuple[float, float]:
    """Симетричний інтервал beta_j -+ z_{1-alpha/2} * se_j"""
    _check_index(j, fit.p)
    _check_alpha(alpha)
    se = np.sqrt(beta_covariance(fit, avar)[j, j])
    half = float(norm.ppf(1 - alpha / 2)) * se
    return float(fit.beta[j] - half), float(fit.beta[j] + half)


def sigma_star_hat(fit: CedarFit, payloads: Sequence[SitePayload], regime: Regime = Regime.MAIN) -> AsymptoticVariance:
    """
    Оцінка Sigma* з імпутованих матриць Грама та нормованих блоків BB'/psi.

    main:   (1/N) S_1 + (1/N) sum S_m G_m S_m / K_m
    smallK: (1/M) [n_1 S_1^{-1} + sum n_m G_m / K_m]
    де G_m = B_m B_m' / psi. S_hat[0] є центральним сайтом, далі сайти за site_id.
    """
    payloads = sorted(payloads, key=lambda pl: pl.site_id)
    n1 = fit.n_total - sum(pl.n for pl in payloads)
    gamma = float(np.mean([pl.K / pl.n for pl in payloads])) if payloads else 0.0
    if regime == Regime.HOMOGENEOUS:
        return AsymptoticVariance(Sigma_star=fit.Sigma, regime=regime, gamma=gamma)
    missing = [pl.site_id for pl in payloads if pl.K == 0 or pl.block is None]
    if missing:
        raise EstimatorUnavailableError(f"sites {missing} sent no posterior samples (K=0), Sigma* cannot be estimated")

    S1 = np.asarray(fit.S_hat[0])
    if regime == Regime.MAIN:
        total = S1.copy()
        for S_m, pl in zip(fit.S_hat[1:], payloads):
            total += S_m @ pl.block.normalized_gram() @ S_m / pl.K
        Sigma_star = total / fit.n_total
    else:
        M = len(payloads) + 1
        total = n1 * spd_inverse(S1, what="central Gram matrix")
        for pl in payloads:
            total += pl.n * pl.block.normalized_gram() / pl.K
        Sigma_star = total / M
    return AsymptoticVariance(Sigma_star=symmetrize(Sigma_star), regime=regime, gamma=gamma)


def theory_sigma0(Sigma0_list: Sequence[np.ndarray], gamma: float) -> np.ndarray:
    """
    Нуль f0(S) = (1/M) S_1 + ((1+g)/M) sum_{m>1} (S^{-1} + g (S_m)^{-1})^{-1} - S
    методом простої ітерації від (1/M) sum S_m.
    """
    if gamma < 0:
        raise InvalidConfigError("gamma must be nonnegative")
    Sigma0_list = [np.asarray(S, dtype=float) for S in Sigma0_list]
    if gamma == 0:
        return Sigma0_list[0].copy()
    M = len(Sigma0_list)
    remote_inv = [spd_inverse(S, what="design covariance") for S in Sigma0_list[1:]]

    def f0_plus(Sigma: np.ndarray) -> np.ndarray:
        Sigma_inv = spd_inverse(Sigma, what="Sigma0 iterate")
        total = Sigma0_list[0] / M
        for Sm_inv in remote_inv:
            total = total + (1 + gamma) / M * spd_inverse(Sigma_inv + gamma * Sm_inv)
        return symmetrize(total)

    Sigma = sum(Sigma0_list) / M
    for _ in range(FIXED_POINT_MAX_ITERS):
        new = f0_plus(Sigma)
        if np.linalg.norm(new - Sigma) < FIXED_POINT_TOL:
            return new
        Sigma = new
    raise NumericalError(f"Sigma0 fixed point did not converge in {FIXED_POINT_MAX_ITERS} iterations")


def theory_sigma_star(Sigma0_list: Sequence[np.ndarray], Sigma0: np.ndarray, gamma: float) -> np.ndarray:
    """
    gamma > 0: (1/M) S_1 + ((1+g)^2/M) sum_{m>1} T_m S_m^{-1} T_m, T_m = (Sigma0^{-1} + g S_m^{-1})^{-1}
    gamma = 0: (1/M) sum S_m^{-1}
    """
    Sigma0_list = [np.asarray(S, dtype=float) for S in Sigma0_list]
    M = len(Sigma0_list)
    if gamma == 0:
        return symmetrize(sum(spd_inverse(S, what="design covariance") for S in Sigma0_list) / M)
    Sigma0_inv = spd_inverse(Sigma0, what="Sigma0")
    total = Sigma0_list[0] / M
    for S in Sigma0_list[1:]:
        S_inv = spd_inverse(S, what="design covariance")
        T = spd_inverse(Sigma0_inv + gamma * S_inv)
        total = total + (1 + gamma) ** 2 / M * T @ S_inv @ T
    return symmetrize(total)
