# -*- coding: utf-8 -*-
"""
Допоміжні функції лінійної алгебри для симетричних додатно визначених матриць
"""

from typing import Optional, Tuple

import numpy as np
import scipy.linalg as la

from .errors import NumericalError


def symmetrize(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A + A.T)


def spd_cholesky(A: np.ndarray, site_id: Optional[int] = None,
                 iteration: Optional[int] = None, what: str = "matrix") -> Tuple[np.ndarray, bool]:
    """
    Розклад Холецького без jitter: невдача означає, що матриця не SPD.

    Returns:
        (c, lower) у форматі scipy.linalg.cho_factor
    """
    if not np.all(np.isfinite(A)):
        raise NumericalError(f"{what} has non-finite entries", site_id=site_id, iteration=iteration)
    try:
        return la.cho_factor(A, lower=True, check_finite=False)
    except la.LinAlgError:
        raise NumericalError(f"{what} is not positive definite", site_id=site_id, iteration=iteration)


def spd_solve(A: np.ndarray, b: np.ndarray, **context) -> np.ndarray:
    factor = spd_cholesky(A, **context)
    return la.cho_solve(factor, b, check_finite=False)


def spd_inverse(A: np.ndarray, **context) -> np.ndarray:
    factor = spd_cholesky(A, **context)
    inv = la.cho_solve(factor, np.eye(A.shape[0]), check_finite=False)
    return symmetrize(inv)


def logdet(A: np.ndarray, **context) -> float:
    """Логарифм визначника SPD матриці через фактор Холецького"""
    c, _ = spd_cholesky(A, **context)
    return 2.0 * float(np.log(np.diag(c)).sum())


def pack_upper(A: np.ndarray) -> np.ndarray:
    """Верхній трикутник по рядках, p(p+1)/2 елементів"""
    return A[np.triu_indices(A.shape[0])]


def unpack_upper(values: np.ndarray, p: int) -> np.ndarray:
    A = np.zeros((p, p))
    A[np.triu_indices(p)] = values
    return A + np.triu(A, 1).T
