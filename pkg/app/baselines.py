# -*- coding: utf-8 -*-
"""
Методи порівняння: AVGM (усереднення локальних оцінок), OPT (об'єднані
достатні статистики) та CSL (сурогатна правдоподібність, один додатковий раунд)
"""

import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as la

from .errors import EstimatorUnavailableError, InvalidConfigError
from .estimation import gram_factor
from .inference import wald_from_covariance
from .linalg import spd_inverse, spd_solve, symmetrize
from .models import CslInputs, LocalFit, SiteData, Sided, SufficientStats, WaldResult
from .sparse import hard_threshold, lambda_max, penalized_quadratic

logger = logging.getLogger(__name__)


def _nonempty(values: Sequence, what: str) -> None:
    if len(values) == 0:
        raise InvalidConfigError(f"{what} must not be empty")


# --- AVGM ---

def avgm(betas: Sequence[np.ndarray]) -> np.ndarray:
    """Середнє арифметичне локальних OLS оцінок"""
    _nonempty(betas, "list of local estimates")
    arr = np.asarray([np.asarray(b, dtype=float) for b in betas])
    if arr.ndim != 2:
        raise InvalidConfigError("local estimates must share one dimension")
    return arr.mean(axis=0)


def avgm_wald(walds: Sequence) -> np.ndarray:
    """sum W_m / sqrt(M); працює і для скалярів, і для векторів статистик"""
    _nonempty(walds, "list of Wald statistics")
    arr = np.asarray(walds, dtype=float)
    return arr.sum(axis=0) / np.sqrt(arr.shape[0])


def local_wald(fit: LocalFit, j: Optional[int] = None, b0: float = 0.0) -> np.ndarray:
    """
    Стандартна статистика Вальда сайту з незміщеною s^2 = RSS/(n - p).
    j=None повертає статистики для всіх коефіцієнтів.
    """
    if fit.n <= fit.p:
        raise EstimatorUnavailableError(f"site {fit.site_id}: n={fit.n} <= p={fit.p}, residual variance unavailable")
    s2 = fit.n * fit.sigma_hat_sq / (fit.n - fit.p)
    se = np.sqrt(s2 * np.diag(spd_inverse(fit.S, site_id=fit.site_id, what="Gram matrix")))
    W = (fit.beta_hat - b0) / se
    return W if j is None else np.array([W[j]])


# --- OPT ---

def pool_stats(stats: Sequence[SufficientStats]) -> SufficientStats:
    _nonempty(stats, "list of sufficient statistics")
    total = stats[0]
    for s in stats[1:]:
        total = total + s
    return total


def _opt_solution(pooled: SufficientStats) -> Tuple[np.ndarray, float]:
    p = pooled.Xty.size
    beta = spd_solve(pooled.S, pooled.Xty, what="pooled Gram matrix")
    if pooled.n <= p:
        raise EstimatorUnavailableError(f"pooled sample size N={pooled.n} <= p={p}")
    sigma_sq = max(pooled.yty - float(beta @ pooled.Xty), 0.0) / (pooled.n - p)
    return beta, sigma_sq


def opt_fit(stats: Sequence[SufficientStats]) -> Tuple[np.ndarray, np.ndarray]:
    """
    beta = (sum S_m)^{-1} sum X_m'y_m; var_scale = sigma^2 (sum S_m)^{-1}
    з sigma^2 = (sum y'y - beta' sum X'y) / (N - p)
    """
    pooled = pool_stats(stats)
    beta, sigma_sq = _opt_solution(pooled)
    return beta, sigma_sq * spd_inverse(pooled.S, what="pooled Gram matrix")


def opt_lasso(stats: Sequence[SufficientStats], lam: float) -> np.ndarray:
    """min 1/2 b'(sum S)b - b'(sum X'y) + lam * sigma^2 * ||b||_1"""
    pooled = pool_stats(stats)
    beta, sigma_sq = _opt_solution(pooled)
    return penalized_quadratic(pooled.S, pooled.Xty, lam * sigma_sq, beta0=beta)


def opt_lambda_max(stats: Sequence[SufficientStats]) -> float:
    pooled = pool_stats(stats)
    _, sigma_sq = _opt_solution(pooled)
    return lambda_max(pooled.Xty, sigma_sq)


def opt_wald(stats: Sequence[SufficientStats], j: int, b0: float = 0.0,
             alpha: float = 0.05, sided: Sided = Sided.TWO_SIDED) -> WaldResult:
    beta, var_scale = opt_fit(stats)
    return wald_from_covariance(beta, var_scale, j, b0, alpha, sided)


# --- CSL ---

def csl_gradient(data: SiteData, beta_bar: np.ndarray) -> np.ndarray:
    """Градієнт L_m(b) = (1/2n) ||y - Xb||^2 у точці beta_bar"""
    beta_bar = np.asarray(beta_bar, dtype=float)
    if beta_bar.shape != (data.p,):
        raise InvalidConfigError(f"beta_bar has shape {beta_bar.shape}, site {data.site_id} has p={data.p}")
    return -(data.X.T @ (data.y - data.X @ beta_bar)) / data.n


def global_gradient(inputs: CslInputs) -> np.ndarray:
    grads = np.asarray(inputs.gradients)
    if inputs.sizes is None:
        return grads.mean(axis=0)
    w = np.asarray(inputs.sizes, dtype=float)
    return (w[:, None] * grads).sum(axis=0) / w.sum()


def csl_fit(inputs: CslInputs) -> np.ndarray:
    """argmin L_1(b) - (grad L_1(beta_bar) - grad L(beta_bar))'b = beta_bar - n_1 S_1^{-1} grad L(beta_bar)"""
    central = inputs.central
    _, factor = gram_factor(central)
    return inputs.beta_bar - central.n * la.cho_solve(factor, global_gradient(inputs))


def _total_size(inputs: CslInputs) -> int:
    if inputs.sizes is not None:
        return int(sum(inputs.sizes))
    return inputs.central.n * len(inputs.gradients)


def _csl_quadratic(inputs: CslInputs, beta_c: np.ndarray) -> Tuple[np.ndarray, np.ndarray, float]:
    central = inputs.central
    N = _total_size(inputs)
    H = (N / central.n) * symmetrize(central.X.T @ central.X)
    resid = central.y - central.X @ beta_c
    sigma1_sq = float(resid @ resid) / central.n
    return H, H @ beta_c, sigma1_sq


def csl_covariance(inputs: CslInputs, beta: np.ndarray) -> np.ndarray:
    """(n_1/N) sigma_1^2 S_1^{-1}, sigma_1^2 = залишкова дисперсія центрального сайту в beta"""
    H, _, sigma1_sq = _csl_quadratic(inputs, beta)
    return sigma1_sq * spd_inverse(H, site_id=inputs.central.site_id, what="central Gram matrix")


def csl_lasso(inputs: CslInputs, lam: float) -> np.ndarray:
    """Сурогатна втрата, масштабована на N, плюс lam * sigma_1^2 * ||b||_1"""
    beta_c = csl_fit(inputs)
    H, h, sigma1_sq = _csl_quadratic(inputs, beta_c)
    return penalized_quadratic(H, h, lam * sigma1_sq, beta0=beta_c)


def csl_lambda_max(inputs: CslInputs) -> float:
    beta_c = csl_fit(inputs)
    _, h, sigma1_sq = _csl_quadratic(inputs, beta_c)
    return lambda_max(h, sigma1_sq)


def csl_wald(inputs: CslInputs, j: int, b0: float = 0.0,
             alpha: float = 0.05, sided: Sided = Sided.TWO_SIDED) -> WaldResult:
    beta = csl_fit(inputs)
    return wald_from_covariance(beta, csl_covariance(inputs, beta), j, b0, alpha, sided)


def hard_threshold_path(beta: np.ndarray, fractions: Sequence[float]) -> List[np.ndarray]:
    """Жорстке порогування AVGM на рівнях fraction * max|beta|"""
    scale = float(np.max(np.abs(beta))) if beta.size else 0.0
    return [hard_threshold(beta, f * scale) for f in fractions]
