# -*- coding: utf-8 -*-
"""
Локальне оцінювання на сайті: MLE та достатні статистики
"""

import logging

import numpy as np
import scipy.linalg as la

from .errors import RankDeficiencyError
from .models import LocalFit, SiteData, SufficientStats

logger = logging.getLogger(__name__)


def gram_factor(data: SiteData):
    """Фактор Холецького X'X; помилка рангу називає сайт"""
    if data.n < data.p:
        raise RankDeficiencyError(data.site_id, f"n={data.n} < p={data.p}, Gram matrix is singular")
    # ранг за SVD з допуском max(n, p) * eps * s_max
    rank = int(np.linalg.matrix_rank(data.X))
    if rank < data.p:
        raise RankDeficiencyError(data.site_id, f"design has rank {rank} < p={data.p}, Gram matrix is singular")
    S = data.X.T @ data.X
    try:
        return S, la.cho_factor(S, lower=True)
    except la.LinAlgError:
        raise RankDeficiencyError(data.site_id)


def local_mle(data: SiteData) -> LocalFit:
    """
    OLS/MLE оцінка сайту.

    sigma_hat_sq має дільник n (MLE), тож n * sigma_hat_sq / sigma0^2 ~ chi^2_{n-p}.
    """
    S, factor = gram_factor(data)
    beta_hat = la.cho_solve(factor, data.X.T @ data.y)
    resid = data.y - data.X @ beta_hat
    sigma_hat_sq = float(resid @ resid) / data.n
    logger.debug(f"Local MLE for site {data.site_id}: n={data.n}, p={data.p}, sigma^2={sigma_hat_sq:.4g}")
    return LocalFit(beta_hat=beta_hat, sigma_hat_sq=sigma_hat_sq, S=0.5 * (S + S.T),
                    n=data.n, p=data.p, site_id=data.site_id)


def sufficient_stats(data: SiteData) -> SufficientStats:
    """Точні (X'X, X'y, y'y, n)"""
    S = data.X.T @ data.X
    return SufficientStats(S=0.5 * (S + S.T), Xty=data.X.T @ data.y,
                           yty=float(data.y @ data.y), n=data.n)
