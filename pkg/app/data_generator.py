# -*- coding: utf-8 -*-
"""
Генератор синтетичних даних сайтів та читання/запис CSV
"""

import logging
import os
from typing import List, Optional

import numpy as np
import pandas as pd
from pydantic import ValidationError

from .errors import DataFileError, InvalidConfigError
from .models import FeatureLaw, GroundTruth, SiteData

logger = logging.getLogger(__name__)

# Параметри розподілів з одиничною дисперсією
UNIFORM_HALF_WIDTH = np.sqrt(3.0)
LAPLACE_SCALE = 1.0 / np.sqrt(2.0)


def feature_laws(p: int, rng: np.random.Generator) -> List[FeatureLaw]:
    """Половина стовпців гаусові, чверть рівномірні, решта Лапласа; позиції випадкові"""
    if not isinstance(p, (int, np.integer)) or p < 1:
        raise InvalidConfigError(f"p must be a positive integer, got {p!r}")
    n_gauss = p // 2
    n_unif = p // 4
    laws = ([FeatureLaw.GAUSSIAN] * n_gauss + [FeatureLaw.UNIFORM] * n_unif
            + [FeatureLaw.LAPLACE] * (p - n_gauss - n_unif))
    order = rng.permutation(p)
    return [laws[i] for i in order]


def make_ground_truth(p: int, seed: int, sigma0_sq: float = 1.0, design: str = "sparse") -> GroundTruth:
    """
    Справжні коефіцієнти: перші max(1, p//4) з U(0,1), решта нулі.
    design="null" дає нульовий вектор.
    """
    if not isinstance(p, (int, np.integer)) or p < 1:
        raise InvalidConfigError(f"p must be a positive integer, got {p!r}")
    if sigma0_sq <= 0:
        raise InvalidConfigError("sigma0_sq must be positive")
    rng = np.random.default_rng(seed)
    beta0 = np.zeros(p)
    if design == "sparse":
        k = max(1, p // 4)
        beta0[:k] = rng.uniform(0.0, 1.0, size=k)
    elif design != "null":
        raise InvalidConfigError(f"unknown design {design!r}")
    return GroundTruth(beta0=beta0, sigma0_sq=sigma0_sq, feature_law=feature_laws(p, rng))


def _draw_column(law: FeatureLaw, n: int, rng: np.random.Generator) -> np.ndarray:
    if law == FeatureLaw.GAUSSIAN:
        return rng.standard_normal(n)
    if law == FeatureLaw.UNIFORM:
        return rng.uniform(-UNIFORM_HALF_WIDTH, UNIFORM_HALF_WIDTH, size=n)
    return rng.laplace(0.0, LAPLACE_SCALE, size=n)


def generate_site_data(truth: GroundTruth, n: int, seed: int, site_id: int = 1) -> SiteData:
    """Генерація даних одного сайту: y = X beta0 + e, e ~ N(0, sigma0^2)"""
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise InvalidConfigError(f"n must be a positive integer, got {n!r}")
    rng = np.random.default_rng(seed)
    laws = truth.feature_law if truth.feature_law is not None else feature_laws(truth.p, rng)
    X = np.column_stack([_draw_column(law, n, rng) for law in laws])
    e = rng.normal(0.0, np.sqrt(truth.sigma0_sq), size=n)
    y = X @ truth.beta0 + e
    return SiteData(X=X, y=y, site_id=site_id)


def write_site_csv(data: SiteData, path: str) -> None:
    """Запис у CSV без заголовка: ознаки, потім відгук"""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    df = pd.DataFrame(np.column_stack([data.X, data.y]))
    df.to_csv(path, header=False, index=False, float_format="%.17g")
    logger.info(f"Saved {data.n} rows for site {data.site_id} to {path}")


def read_site_csv(path: str, site_id: int, expected_p: Optional[int] = None) -> SiteData:
    """Читання CSV сайту; помилки вказують файл і рядок (з 1)"""
    try:
        df = pd.read_csv(path, header=None, dtype=str, skip_blank_lines=True)
    except FileNotFoundError:
        raise DataFileError(path, "file not found")
    except pd.errors.EmptyDataError:
        raise DataFileError(path, "file is empty")
    except pd.errors.ParserError as exc:
        raise DataFileError(path, f"malformed CSV: {exc}")

    if df.shape[1] < 2:
        raise DataFileError(path, "need at least one feature column and a response column")
    if expected_p is not None and df.shape[1] - 1 != expected_p:
        raise DataFileError(path, f"expected {expected_p} feature columns, found {df.shape[1] - 1}")

    numeric = df.apply(pd.to_numeric, errors="coerce")
    bad = numeric.isna() | ~np.isfinite(numeric.to_numpy(dtype=float, na_value=np.nan))
    if bad.to_numpy().any():
        row_idx, col_idx = np.argwhere(bad.to_numpy())[0]
        raise DataFileError(path, f"non-numeric or non-finite value in column {col_idx + 1}", row=int(row_idx) + 1)

    values = numeric.to_numpy(dtype=float)
    try:
        return SiteData(X=values[:, :-1], y=values[:, -1], site_id=site_id)
    except ValidationError as exc:
        raise DataFileError(path, str(exc))
