# -*- coding: utf-8 -*-
"""
L1 розрідження: soft/hard thresholding та проксимальний градієнт з backtracking
для задач вигляду 1/2 b'Hb - h'b + penalty * ||b||_1
"""

import logging
from typing import Optional

import numpy as np

from . import config
from .errors import InvalidConfigError, LineSearchError

logger = logging.getLogger(__name__)

MIN_STEP_RATIO = 1e-20


def prox_l1(x: np.ndarray, lam: float, s: float) -> np.ndarray:
    """Soft-thresholding на рівні lam * s"""
    if not s > 0:
        raise InvalidConfigError(f"step size must be positive, got {s}")
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.maximum(np.abs(x) - lam * s, 0.0)


def hard_threshold(x: np.ndarray, t: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.where(np.abs(x) > t, x, 0.0)


def lambda_max(h: np.ndarray, scale: float = 1.0) -> float:
    """Найменше lam, при якому нульовий вектор оптимальний для penalty = lam * scale"""
    return float(np.max(np.abs(h))) / scale if np.size(h) else 0.0


def quadratic_value(H: np.ndarray, h: np.ndarray, beta: np.ndarray) -> float:
    return 0.5 * float(beta @ H @ beta) - float(h @ beta)


def penalized_quadratic(H: np.ndarray, h: np.ndarray, penalty: float,
                        beta0: Optional[np.ndarray] = None,
                        tol: float = config.PROX_TOL,
                        max_iters: int = config.PROX_MAX_ITERS) -> np.ndarray:
    """
    Проксимальний градієнт з Armijo backtracking.

    Гладка частина Q(b) = 1/2 b'Hb - h'b, крок s зменшується вдвічі, доки
    Q(z) <= Q(b) + grad'(z - b) + ||z - b||^2 / (2s). Зупинка, коли
    ||z - b||_inf <= tol * max(1, ||b||_inf).
    """
    if penalty < 0:
        raise InvalidConfigError(f"penalty must be nonnegative, got {penalty}")
    p = h.shape[0]
    beta = np.zeros(p) if beta0 is None else np.array(beta0, dtype=float)

    trace = float(np.trace(H))
    s = p / trace if trace > 0 else 1.0
    s_floor = s * MIN_STEP_RATIO

    q_beta = quadratic_value(H, h, beta)
    for it in range(1, max_iters + 1):
        grad = H @ beta - h
        while True:
            z = prox_l1(beta - s * grad, penalty, s)
            diff = z - beta
            q_z = quadratic_value(H, h, z)
            if q_z <= q_beta + float(grad @ diff) + float(diff @ diff) / (2.0 * s) + 1e-14 * abs(q_beta):
                break
            s *= 0.5
            if s < s_floor:
                raise LineSearchError(f"backtracking step underflow at iteration {it}")
        converged = np.max(np.abs(diff), initial=0.0) <= tol * max(1.0, np.max(np.abs(beta), initial=0.0))
        beta, q_beta = z, q_z
        if converged:
            return beta

    logger.warning(f"Proximal gradient stopped after {max_iters} iterations without reaching tol={tol}")
    return beta
