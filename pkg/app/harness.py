# -*- coding: utf-8 -*-
"""
Симуляційні експерименти: похибка оцінювання, потужність тестів, ROC відбору
змінних, таблиця рівнів приватності та аналіз CSV файлів сайтів.
"""

import json
import logging
import os
import tempfile
import time
from contextlib import nullcontext
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import ValidationError
from scipy.integrate import trapezoid
from scipy.stats import norm

from . import config
from .data_generator import generate_site_data, make_ground_truth, read_site_csv
from .errors import CedarError, DimensionMismatchError, InvalidConfigError
from .methods import MethodOptions, MethodResult, run_method, sparse_path
from .models import (
    Alternative,
    CedarOptions,
    ExperimentConfig,
    GroundTruth,
    Hypothesis,
    MethodName,
    PrivacyEstimator,
    PrivacyScenario,
    ResultRow,
    SiteData,
    Sided,
    SparseConfig,
)
from .posterior import derive_seed
from .privacy import privacy_report
from .protocol import SiteNode, make_transport

logger = logging.getLogger(__name__)

# (p, K) рядки та значення c таблиці рівнів приватності
PRIVACY_GRID_ROWS = [(4, 4), (4, 16), (16, 4), (16, 16)]
PRIVACY_GRID_C = [1.0, 1 / 2, 1 / 4, 1 / 8, 1 / 16]

# CSL1 прибирається з агрегованих графіків, якщо його похибка більша за OPT у стільки разів
CSL1_PLOT_RATIO = 10.0


def default_config(master_seed: int = 0, full_scale: bool = False, **overrides) -> ExperimentConfig:
    """Сітка за замовчуванням: настільна (p=4) або повна (p=32)"""
    if full_scale:
        base = dict(p=32, n_grid=[32, 64, 128, 256, 512], M_grid=[16], K_list=[0, 4, 16], full_scale=True)
    else:
        base = dict(p=4, n_grid=[8, 16, 32, 64, 128, 256], M_grid=[16], K_list=[0, 4, 16])
    base.update(master_seed=master_seed, **overrides)
    return make_config(base)


def make_config(data: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise InvalidConfigError(f"invalid experiment config: {exc}")


def load_config(path: str, overrides: Optional[dict] = None) -> ExperimentConfig:
    """JSON конфігурація; ключі overrides (прапорці CLI) мають пріоритет"""
    try:
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidConfigError(f"cannot read config {path}: {exc}")
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return make_config(data)


# --- Дані реплікацій ---

def replicate_truth(cfg: ExperimentConfig, replicate: int) -> GroundTruth:
    """Справжні параметри спільні для всіх точок сітки однієї реплікації"""
    return make_ground_truth(cfg.p, derive_seed(cfg.master_seed, replicate), cfg.sigma0_sq, cfg.design)


def replicate_sites(cfg: ExperimentConfig, truth: GroundTruth, n: int, M: int, replicate: int) -> List[SiteData]:
    return [generate_site_data(truth, n, derive_seed(cfg.master_seed, replicate, n, M, m), site_id=m)
            for m in range(1, M + 1)]


def _method_variants(cfg: ExperimentConfig) -> List[Tuple[MethodName, Optional[int]]]:
    variants = []
    for method in cfg.methods:
        if method == MethodName.CEDAR:
            variants += [(method, K) for K in cfg.K_list]
        else:
            variants.append((method, None))
    return variants


def _options(cfg: ExperimentConfig, K: Optional[int], seed: int, cedar: Optional[CedarOptions] = None) -> MethodOptions:
    hypothesis = None
    sided = Sided.TWO_SIDED
    if cfg.tests is not None:
        hypothesis = Hypothesis(j=None, b0=0.0, alpha=cfg.tests.alpha)
        sided = Sided.GREATER if cfg.tests.alternative == Alternative.GREATER else Sided.TWO_SIDED
    return MethodOptions(K=K or 0, psi=cfg.psi, seed=seed, cedar=cedar or cfg.cedar,
                         hypothesis=hypothesis, sided=sided)


def _power_specificity(result: MethodResult, beta0: np.ndarray) -> Tuple[Optional[float], Optional[float]]:
    if result.wald is None:
        return None, None
    reject = np.array([w.reject for w in sorted(result.wald, key=lambda w: w.j)])
    nonzero = beta0 != 0
    power = float(reject[nonzero].mean()) if nonzero.any() else None
    specificity = float((~reject[~nonzero]).mean()) if (~nonzero).any() else None
    return power, specificity


def _workdir(cfg: ExperimentConfig):
    """Тимчасовий корінь файлового транспорту; для in-process не потрібен"""
    if cfg.transport == "filedrop":
        return tempfile.TemporaryDirectory(prefix="cedar_")
    return nullcontext(None)


def _run_methods(cfg: ExperimentConfig, sites: List[SiteData], seed: int, workdir: Optional[str],
                 variants: Sequence[Tuple[MethodName, Optional[int]]]):
    """Запуск варіантів методів на одному наборі сайтів; помилка варіанта не зупиняє інші"""
    central, remote = sites[0], sites[1:]
    nodes = [SiteNode(site) for site in remote]
    site_ids = [site.site_id for site in remote]
    for method, K in variants:
        root = os.path.join(workdir, f"{method.value}_{K or 0}") if workdir else None
        transport = make_transport(cfg.transport, nodes, root)
        started = time.perf_counter()
        try:
            result = run_method(method, central, transport, site_ids, _options(cfg, K, seed))
            yield method, K, result, None, (time.perf_counter() - started) * 1000
        except CedarError as exc:
            logger.warning(f"{method.value} (K={K}) failed: {exc}")
            yield method, K, None, str(exc), (time.perf_counter() - started) * 1000


def _experiment_task(cfg: ExperimentConfig, n: int, M: int, replicate: int) -> List[ResultRow]:
    truth = replicate_truth(cfg, replicate)
    sites = replicate_sites(cfg, truth, n, M, replicate)
    seed = derive_seed(cfg.master_seed, replicate, n, M, 0)
    rows = []
    with _workdir(cfg) as workdir:
        for method, K, result, error, wall_ms in _run_methods(cfg, sites, seed, workdir, _method_variants(cfg)):
            row = dict(method=method.value, p=cfg.p, n=n, M=M, K=K, replicate=replicate,
                       wall_ms=wall_ms if cfg.record_timing else None)
            if result is None:
                rows.append(ResultRow(failed=True, error=error, **row))
                continue
            power, specificity = _power_specificity(result, truth.beta0)
            rows.append(ResultRow(l2_error=float(np.linalg.norm(result.beta - truth.beta0)), power=power,
                                  specificity=specificity, comm_rounds=result.trace.rounds, **row))
    return rows


def _sort_key(row: ResultRow):
    return (row.method, -1 if row.K is None else row.K, row.n, row.M, row.replicate)


def _parallel(cfg: ExperimentConfig, task, args: List[tuple]) -> list:
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            chunks = list(pool.map(lambda a: task(cfg, *a), args))
    else:
        chunks = [task(cfg, *a) for a in args]
    return [row for chunk in chunks for row in chunk]


def run_experiment(cfg: ExperimentConfig) -> List[ResultRow]:
    """Усі точки сітки та реплікації; результат відсортований і детермінований"""
    args = [(n, M, r) for n, M in cfg.grid() for r in range(cfg.replicates)]
    logger.info(f"Experiment: p={cfg.p}, grid={cfg.grid()}, replicates={cfg.replicates}, workers={cfg.workers}")
    rows = sorted(_parallel(cfg, _experiment_task, args), key=_sort_key)
    failed = sum(row.failed for row in rows)
    if failed:
        logger.warning(f"{failed} of {len(rows)} runs failed")
    return rows


NUMERIC_COLUMNS = ["l2_error", "power", "specificity", "wall_ms"]


def _typed(df: pd.DataFrame) -> pd.DataFrame:
    df = df.copy()
    for col in NUMERIC_COLUMNS:
        df[col] = df[col].astype(float)
    df["K"] = df["K"].astype("Int64")
    df["failed"] = df["failed"].astype(bool)
    return df


def rows_to_frame(rows: Sequence[ResultRow]) -> pd.DataFrame:
    columns = list(ResultRow.model_fields)
    return _typed(pd.DataFrame([row.model_dump() for row in rows], columns=columns))


def write_rows(rows: Sequence[ResultRow], path: str) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    rows_to_frame(rows).to_csv(path, index=False, float_format="%.12g")
    logger.info(f"Saved {len(rows)} rows to {path}")


def _label(frame: pd.DataFrame) -> pd.Series:
    K = frame["K"].astype("Int64").astype(str).replace("<NA>", "")
    return frame["method"] + K


def summarize(rows) -> pd.DataFrame:
    """Середні та стандартні похибки за методом і точкою сітки"""
    df = _typed(rows) if isinstance(rows, pd.DataFrame) else rows_to_frame(rows)
    keys = ["method", "K", "p", "n", "M"]
    # у невдалих рядках l2_error порожній, тож count рахує лише успішні повторення
    summary = df.groupby(keys, dropna=False).agg(
        replicates=("l2_error", "count"),
        l2_error=("l2_error", "mean"),
        l2_error_sd=("l2_error", "std"),
        power=("power", "mean"),
        specificity=("specificity", "mean"),
        comm_rounds=("comm_rounds", "max"),
        failed=("failed", "sum"),
    ).reset_index()
    summary["l2_error_se"] = summary["l2_error_sd"] / np.sqrt(summary["replicates"])
    summary = summary.drop(columns="l2_error_sd")
    summary["label"] = _label(summary)
    return summary.sort_values(keys).reset_index(drop=True)


def plot_series(summary: pd.DataFrame) -> pd.DataFrame:
    """Ряди для графіків; CSL1 прибирається, якщо його похибка > 10x OPT"""
    opt = summary[summary["method"] == MethodName.OPT.value]
    csl1 = summary[summary["method"] == MethodName.CSL1.value]
    if not opt.empty and not csl1.empty:
        if csl1["l2_error"].mean() > CSL1_PLOT_RATIO * opt["l2_error"].mean():
            logger.info("CSL1 removed from plots: error exceeds 10x OPT")
            return summary[summary["method"] != MethodName.CSL1.value]
    return summary


def write_gnuplot(summary: pd.DataFrame, directory: str, x: str = "n") -> List[str]:
    """По одному .dat файлу на метод: x, середня похибка, стандартна похибка"""
    os.makedirs(directory, exist_ok=True)
    paths = []
    for label, group in plot_series(summary).groupby("label", sort=True):
        path = os.path.join(directory, f"{label}.dat")
        cols = [x, "l2_error", "l2_error_se", "power", "specificity"]
        group.sort_values(x)[cols].to_csv(path, sep=" ", index=False, header=False, float_format="%.8g", na_rep="nan")
        paths.append(path)
    return paths


# --- Потужність тестів ---

def run_power_study(cfg: ExperimentConfig) -> pd.DataFrame:
    """Потужність (ненульові коефіцієнти) і специфічність (нульові) за методом"""
    if cfg.tests is None:
        raise InvalidConfigError("power study needs a 'tests' section in the config")
    summary = summarize(run_experiment(cfg))
    return summary[["method", "K", "p", "n", "M", "replicates", "power", "specificity", "failed"]]


# --- ROC відбору змінних ---

def _roc_task(cfg: ExperimentConfig, n: int, M: int, replicate: int) -> List[dict]:
    truth = replicate_truth(cfg, replicate)
    sites = replicate_sites(cfg, truth, n, M, replicate)
    seed = derive_seed(cfg.master_seed, replicate, n, M, 0)
    support = truth.beta0 != 0
    rows = []
    with _workdir(cfg) as workdir:
        for method, K, result, error, _ in _run_methods(cfg, sites, seed, workdir, _method_variants(cfg)):
            if result is None:
                continue
            fractions = cfg.sparse.threshold_grid if method == MethodName.AVGM else cfg.sparse.lambda_grid
            try:
                betas = sparse_path(result, fractions, cfg.cedar)
            except CedarError as exc:
                logger.warning(f"{method.value} (K={K}) sparse path failed: {exc}")
                continue
            for fraction, beta in zip(fractions, betas):
                selected = beta != 0
                tpr = float(selected[support].mean()) if support.any() else np.nan
                fpr = float(selected[~support].mean()) if (~support).any() else np.nan
                rows.append(dict(method=method.value, K=K, p=cfg.p, n=n, M=M, replicate=replicate,
                                 fraction=fraction, tpr=tpr, fpr=fpr))
    return rows


def run_roc_study(cfg: ExperimentConfig) -> pd.DataFrame:
    """Середні TPR/FPR вздовж сітки штрафів (відносні частки lambda_max)"""
    if cfg.sparse is None:
        cfg = cfg.model_copy(update={"sparse": SparseConfig()})
    args = [(n, M, r) for n, M in cfg.grid() for r in range(cfg.replicates)]
    raw = pd.DataFrame(_parallel(cfg, _roc_task, args))
    if raw.empty:
        return raw
    raw["K"] = raw["K"].astype("Int64")
    curve = (raw.groupby(["method", "K", "p", "n", "M", "fraction"], dropna=False)[["tpr", "fpr"]]
             .mean().reset_index())
    curve["label"] = _label(curve)
    return curve.sort_values(["method", "K", "n", "M", "fraction"]).reset_index(drop=True)


def roc_auc(curve: pd.DataFrame) -> Dict[str, float]:
    """Площа під ROC за правилом трапецій з точками (0,0) та (1,1)"""
    areas = {}
    for label, group in curve.groupby("label", sort=True):
        points = group[["fpr", "tpr"]].dropna().to_numpy()
        points = np.vstack([[0.0, 0.0], points, [1.0, 1.0]])
        order = np.lexsort((points[:, 1], points[:, 0]))
        points = points[order]
        areas[label] = float(trapezoid(points[:, 1], points[:, 0]))
    return areas


# --- Таблиця приватності ---

def run_privacy_table(grid: Optional[Sequence[Tuple[int, int, float]]] = None, psi: float = 100.0,
                      reps: int = config.DEFAULT_MC_REPS, redraws: int = config.DEFAULT_MC_REDRAWS,
                      seed: int = 0, estimator: PrivacyEstimator = PrivacyEstimator.HOCKEY_STICK,
                      n: Optional[int] = None, delta: Optional[float] = None) -> pd.DataFrame:
    """
    Мінімальне epsilon для комірок (p, K, c). За замовчуванням n = p/c та delta = 1/n;
    явні n і delta фіксують їх для всіх комірок.
    """
    if grid is None:
        grid = [(p, K, c) for p, K in PRIVACY_GRID_ROWS for c in PRIVACY_GRID_C]
    rows = []
    for cell, (p, K, c) in enumerate(grid):
        n_cell = n or int(round(p / c))
        scenario = PrivacyScenario(n=n_cell, p=p, K=K, psi=psi, c=c, delta=delta, reps=reps, redraws=redraws,
                                   seed=derive_seed(seed, cell), estimator=estimator)
        report = privacy_report(scenario)
        rows.append(dict(p=p, K=K, c=c, n=n_cell, delta=scenario.effective_delta, eps_mc=report.eps_mc,
                         eps_forward_mean=report.eps_forward, eps_reverse_mean=report.eps_reverse,
                         eps_expected=report.eps_expected, dominance_violations=report.dominance_violations))
        logger.info(f"Privacy cell p={p}, K={K}, c={c:.4g}: eps_mc={report.eps_mc:.3f}")
    return pd.DataFrame(rows)


# коротка назва таблиці рівнів приватності
run_table1 = run_privacy_table


def privacy_table_layout(table: pd.DataFrame) -> pd.DataFrame:
    """Рядки (p, K), стовпці c"""
    return table.pivot(index=["p", "K"], columns="c", values="eps_mc").sort_index(axis=1, ascending=False)


# --- Аналіз CSV файлів ---

def resolve_data_paths(paths: Sequence[str], data_dir: str) -> List[str]:
    """Шляхи відносно data_dir; все, що після розв'язання посилань веде за його межі, відхиляється"""
    root = os.path.realpath(data_dir)
    resolved = []
    for path in paths:
        full = os.path.realpath(os.path.join(root, path))
        if os.path.commonpath([root, full]) != root:
            raise InvalidConfigError(f"path {path!r} is outside the data directory")
        resolved.append(full)
    return resolved


def read_sites(paths: Sequence[str]) -> List[SiteData]:
    """Файли сайтів з site_id 1, 2, ... в порядку paths; кількість ознак має збігатися"""
    if not paths:
        raise InvalidConfigError("at least one site CSV is required")
    sites = [read_site_csv(path, site_id=i) for i, path in enumerate(paths, start=1)]
    p = sites[0].p
    for path, site in zip(paths, sites):
        if site.p != p:
            raise DimensionMismatchError(f"{path} has {site.p} features, {paths[0]} has {p}")
    return sites


def median_central(sites: Sequence[SiteData]) -> Tuple[List[SiteData], int]:
    """Сайт медіанного розміру стає центральним (site_id 1), решта нумеруються далі в початковому порядку; повертає також його індекс"""
    order = np.argsort([site.n for site in sites], kind="stable")
    centre = int(order[(len(sites) - 1) // 2])
    ranked = [sites[centre]] + [site for i, site in enumerate(sites) if i != centre]
    return [site.model_copy(update={"site_id": i}) for i, site in enumerate(ranked, start=1)], centre


def _wald_vector(result: MethodResult) -> np.ndarray:
    if not result.wald:
        return np.full(result.beta.size, np.nan)
    return np.array([w.statistic for w in sorted(result.wald, key=lambda w: w.j)])


def compare_to_opt(sites: Sequence[SiteData], methods: Optional[Sequence[MethodName]] = None, K: int = 0,
                   psi: float = config.DEFAULT_PSI, seed: int = 0, repeats: int = config.DEFAULT_COMPARE_REPEATS,
                   cedar: Optional[CedarOptions] = None) -> pd.DataFrame:
    """
    Відстань оцінок і векторів двосторонніх статистик Вальда до OPT.

    Перший сайт центральний. CEDAR (потребує K > 0) повторюється repeats разів з різними
    апостеріорними вибірками; детерміновані методи виконуються один раз.
    """
    if repeats < 1:
        raise InvalidConfigError("repeats must be at least 1")
    methods = [MethodName(m) for m in (methods or [MethodName.AVGM, MethodName.CSL1, MethodName.CSLA, MethodName.CEDAR])]
    central, remote = sites[0], list(sites[1:])
    site_ids = [site.site_id for site in remote]
    hypothesis = Hypothesis(j=None, b0=0.0)

    def run(method: MethodName, run_seed: int) -> MethodResult:
        opts = MethodOptions(K=K, psi=psi, seed=run_seed, cedar=cedar or CedarOptions(), hypothesis=hypothesis,
                             sided=Sided.TWO_SIDED)
        transport = make_transport("inprocess", [SiteNode(site) for site in remote])
        return run_method(method, central, transport, site_ids, opts)

    reference = run(MethodName.OPT, seed)
    beta_opt, wald_opt = reference.beta, _wald_vector(reference)
    rows = []
    for method in methods:
        if method == MethodName.OPT:
            continue
        count = repeats if method == MethodName.CEDAR else 1
        beta_d, wald_d = [], []
        for r in range(count):
            result = run(method, derive_seed(seed, r))
            beta_d.append(float(np.linalg.norm(result.beta - beta_opt)))
            wald_d.append(float(np.linalg.norm(_wald_vector(result) - wald_opt)))
        rows.append(dict(method=method.value, K=K if method == MethodName.CEDAR else 0, repeats=count,
                         beta_l2=float(np.mean(beta_d)), beta_l2_sd=float(np.std(beta_d)),
                         wald_l2=float(np.mean(wald_d)), wald_l2_sd=float(np.std(wald_d))))
        logger.info(f"Compared {method.value} to opt over {count} runs: beta_l2={rows[-1]['beta_l2']:.4g}")
    return pd.DataFrame(rows)


def analyze_csv(paths: Sequence[str], method: MethodName = MethodName.CEDAR, K: int = 0,
                psi: float = config.DEFAULT_PSI, seed: int = 0, alpha: float = 0.05,
                workdir: Optional[str] = None, cedar: Optional[CedarOptions] = None,
                data_dir: Optional[str] = None, compare: bool = False,
                repeats: int = config.DEFAULT_COMPARE_REPEATS) -> dict:
    """
    Перший файл належить центральному сайту, решта віддаленим (site_id 2, 3, ...).
    Обмін іде через файловий транспорт у workdir; без нього через тимчасовий каталог,
    який видаляється після запуску. З data_dir шляхи розв'язуються лише всередині нього.

    compare=True замість одного методу рахує відстані всіх методів до OPT,
    центральним стає сайт медіанного розміру.
    """
    if data_dir is not None:
        paths = resolve_data_paths(paths, data_dir)
    sites = read_sites(paths)
    p = sites[0].p
    totals = dict(p=p, M=len(sites), N=sum(site.n for site in sites))

    if compare:
        ranked, centre = median_central(sites)
        table = compare_to_opt(ranked, K=K, psi=psi, seed=seed, repeats=repeats, cedar=cedar)
        return dict(mode="compare", central=os.path.basename(paths[centre]), K=K, repeats=repeats,
                    comparison=table.to_dict(orient="records"), **totals)

    method = MethodName(method)
    opts = MethodOptions(K=K, psi=psi, seed=seed, cedar=cedar or CedarOptions(),
                         hypothesis=Hypothesis(j=None, b0=0.0, alpha=alpha))
    scratch = nullcontext(workdir) if workdir else tempfile.TemporaryDirectory(prefix="cedar_run_")
    with scratch as root:
        transport = make_transport("filedrop", [SiteNode(site) for site in sites[1:]], root)
        result = run_method(method, sites[0], transport, [site.site_id for site in sites[1:]], opts)

    output = dict(method=method.value, beta=result.beta.tolist(),
                  wald=[w.model_dump(mode="json") for w in result.wald or []],
                  trace=result.trace.model_dump(mode="json"), transport_root=workdir, **totals)
    if result.covariance is not None:
        se = np.sqrt(np.diag(result.covariance))
        z = float(norm.ppf(1 - alpha / 2))
        output["confidence_intervals"] = [[float(b - z * s), float(b + z * s)] for b, s in zip(result.beta, se)]
    if result.fit is not None:
        output["fit"] = result.fit.summary()
    logger.info(f"Analyzed {len(sites)} site files with {method.value}, rounds={result.trace.rounds}")
    return output
