# -*- coding: utf-8 -*-
"""
Вибірки з масштабованого апостеріорного розподілу на віддаленому сайті.

Форма gamma для sigma^2 дорівнює n/(2*psi) і при psi=100 зазвичай менша за 1,
тож sigma_tilde^2 не має скінченного середнього. Далі використовуються лише
нормовані стовпці (beta_tilde - beta_hat)/sigma_tilde, які мають точний закон
N(0, psi * S^{-1}) незалежно від sigma_tilde.
"""

import logging

import numpy as np
import scipy.linalg as la

from .errors import DegeneratePosteriorError, InvalidConfigError, RankDeficiencyError
from .linalg import symmetrize
from .models import BlockForm, LocalFit, PosteriorBlock, PosteriorDraws

logger = logging.getLogger(__name__)

MAX_GAMMA_REDRAWS = 100


def derive_seed(master_seed: int, *keys: int) -> int:
    """Незалежний детермінований seed для (master_seed, ключі...)"""
    seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(k) for k in keys))
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def is_degenerate(fit: LocalFit) -> bool:
    """Залишкова дисперсія нульова з точністю до округлення (ідеальна підгонка)"""
    fitted_var = float(fit.beta_hat @ fit.S @ fit.beta_hat) / max(fit.n, 1)
    return not fit.sigma_hat_sq > np.finfo(float).eps * max(fitted_var, np.finfo(float).tiny)


def _sigma_draws(rng: np.random.Generator, shape: float, scale: float, K: int) -> np.ndarray:
    # gamma з формою < 1 інколи дає 0 у double; такі значення перетягуються
    g = rng.gamma(shape, scale, size=K)
    for _ in range(MAX_GAMMA_REDRAWS):
        zero = g <= 0
        if not zero.any():
            break
        g[zero] = rng.gamma(shape, scale, size=int(zero.sum()))
    else:
        raise DegeneratePosteriorError(f"inverse-gamma shape {shape:.3g} too small to sample")
    return 1.0 / g


def draw_posterior(fit: LocalFit, K: int, psi: float, seed: int) -> PosteriorDraws:
    """
    K незалежних вибірок:
        sigma^2 ~ InvGamma(n/(2 psi), n sigma_hat^2/(2 psi))
        beta | sigma^2 ~ N(beta_hat, psi sigma^2 S^{-1})
    """
    if K < 0:
        raise InvalidConfigError(f"K must be nonnegative, got {K}")
    if not psi > 0:
        raise InvalidConfigError(f"psi must be positive, got {psi}")
    p = fit.p
    if K == 0:
        return PosteriorDraws(beta_tilde=np.zeros((0, p)), sigma_tilde_sq=np.zeros(0), psi=psi, K=0)
    if is_degenerate(fit):
        raise DegeneratePosteriorError(f"site {fit.site_id}: residual variance is zero, posterior is degenerate")
    try:
        L = la.cholesky(fit.S, lower=True)
    except la.LinAlgError:
        raise RankDeficiencyError(fit.site_id)

    rng = np.random.default_rng(seed)
    shape = fit.n / (2.0 * psi)
    rate = fit.n * fit.sigma_hat_sq / (2.0 * psi)
    sigma_tilde_sq = _sigma_draws(rng, shape, 1.0 / rate, K)

    # L^{-T} z ~ N(0, S^{-1})
    Z = rng.standard_normal((p, K))
    W = la.solve_triangular(L, Z, trans="T", lower=True)
    beta_tilde = fit.beta_hat[None, :] + (np.sqrt(psi) * W * np.sqrt(sigma_tilde_sq)[None, :]).T

    logger.debug(f"Site {fit.site_id}: drew K={K} posterior samples, psi={psi}")
    return PosteriorDraws(beta_tilde=beta_tilde, sigma_tilde_sq=sigma_tilde_sq, psi=psi, K=K)


def normalized_columns(draws: PosteriorDraws, fit: LocalFit) -> np.ndarray:
    """B = [(beta_k - beta_hat)/sigma_k], p x K"""
    if draws.K == 0:
        return np.zeros((fit.p, 0))
    return ((draws.beta_tilde - fit.beta_hat[None, :]) / np.sqrt(draws.sigma_tilde_sq)[:, None]).T


def build_block(draws: PosteriorDraws, fit: LocalFit) -> PosteriorBlock:
    """Стовпці B при K <= p, інакше BB' (менше даних для передачі)"""
    B = normalized_columns(draws, fit)
    if draws.K > fit.p:
        return PosteriorBlock(form=BlockForm.GRAM, data=symmetrize(B @ B.T), K=draws.K, psi=draws.psi)
    return PosteriorBlock(form=BlockForm.COLUMNS, data=B, K=draws.K, psi=draws.psi)
