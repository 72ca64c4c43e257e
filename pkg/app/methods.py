# -*- coding: utf-8 -*-
"""
Драйвери методів: кожен метод складається з раундів протоколу.

Центральний сайт (site_id=1) працює зі своїми даними напряму, віддалені сайти
доступні лише через Transport. Кількість раундів: AVGM/OPT/CSL1/CEDAR по одному,
CSL_A два.
"""

import logging
from typing import List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field

from . import config
from .baselines import (
    avgm,
    avgm_wald,
    csl_covariance,
    csl_fit,
    csl_gradient,
    csl_lambda_max,
    csl_lasso,
    hard_threshold_path,
    local_wald,
    opt_fit,
    opt_lambda_max,
    opt_lasso,
)
from .cedar import cedar_fit, penalty_lambda_max
from .errors import InvalidConfigError
from .estimation import local_mle, sufficient_stats
from .inference import beta_covariance, wald_from_covariance
from .models import (
    ArrayModel,
    CedarFit,
    CedarOptions,
    CommTrace,
    CslInputs,
    FloatArray,
    Hypothesis,
    LocalFit,
    MethodName,
    SiteData,
    SitePayload,
    Sided,
    SufficientStats,
    TaskRequest,
    TaskType,
    WaldResult,
)
from .protocol import Transport, run_round

logger = logging.getLogger(__name__)


class MethodOptions(BaseModel):
    """Параметри запуску методу"""
    K: int = Field(default=0, ge=0)
    psi: float = Field(default=config.DEFAULT_PSI, gt=0)
    seed: int = 0
    cedar: CedarOptions = Field(default_factory=CedarOptions)
    hypothesis: Optional[Hypothesis] = None
    sided: Sided = Sided.TWO_SIDED


class MethodResult(ArrayModel):
    """Оцінка методу разом із зібраними повідомленнями та обліком раундів"""
    method: MethodName
    beta: FloatArray
    covariance: Optional[FloatArray] = None
    wald: Optional[List[WaldResult]] = None
    trace: CommTrace
    fit: Optional[CedarFit] = None
    central_fit: LocalFit
    payloads: List[SitePayload] = Field(default_factory=list)
    stats: Optional[List[SufficientStats]] = None
    csl_inputs: Optional[CslInputs] = None
    local_walds: Optional[FloatArray] = None  # M x p, лише AVGM з тестами


def _request(task: TaskType, opts: MethodOptions, **extra) -> TaskRequest:
    return TaskRequest(task=task, K=opts.K, psi=opts.psi, seed=opts.seed, hypothesis=opts.hypothesis, **extra)


def _wald_list(beta: np.ndarray, cov: np.ndarray, opts: MethodOptions) -> Optional[List[WaldResult]]:
    hyp = opts.hypothesis
    if hyp is None:
        return None
    indices = range(beta.size) if hyp.j is None else [hyp.j]
    return [wald_from_covariance(beta, cov, j, hyp.b0, hyp.alpha, opts.sided) for j in indices]


def _avgm_wald_results(walds: np.ndarray, opts: MethodOptions) -> List[WaldResult]:
    hyp = opts.hypothesis
    combined = avgm_wald(walds)
    indices = range(combined.size) if hyp.j is None else [hyp.j]
    # статистики вже стандартизовані: одинична дисперсія, нуль під H0
    unit = np.eye(combined.size)
    return [wald_from_covariance(combined, unit, pos, 0.0, hyp.alpha, opts.sided)
            .model_copy(update={"j": j, "null_value": hyp.b0})
            for pos, j in enumerate(indices)]


def run_avgm(central: SiteData, transport: Transport, site_ids: Sequence[int], opts: MethodOptions) -> MethodResult:
    central_fit = local_mle(central)
    task = TaskType.WALD_STATS if opts.hypothesis is not None else TaskType.MLE_ONLY
    payloads, trace = run_round(transport, _request(task, opts), site_ids)
    beta = avgm([central_fit.beta_hat] + [pl.beta_hat for pl in payloads])
    result = dict(method=MethodName.AVGM, beta=beta, trace=trace, central_fit=central_fit, payloads=payloads)
    if opts.hypothesis is not None:
        hyp = opts.hypothesis
        walds = np.vstack([local_wald(central_fit, hyp.j, hyp.b0)] + [pl.wald for pl in payloads])
        result.update(local_walds=walds, wald=_avgm_wald_results(walds, opts))
    return MethodResult(**result)


def run_opt(central: SiteData, transport: Transport, site_ids: Sequence[int], opts: MethodOptions) -> MethodResult:
    central_fit = local_mle(central)
    payloads, trace = run_round(transport, _request(TaskType.SUFFICIENT_STATS, opts), site_ids)
    stats = [sufficient_stats(central)] + [pl.stats for pl in payloads]
    beta, cov = opt_fit(stats)
    return MethodResult(method=MethodName.OPT, beta=beta, covariance=cov, wald=_wald_list(beta, cov, opts),
                        trace=trace, central_fit=central_fit, payloads=payloads, stats=stats)


def _run_csl(method: MethodName, central: SiteData, central_fit: LocalFit, beta_bar: np.ndarray,
             transport: Transport, site_ids: Sequence[int], opts: MethodOptions,
             trace: CommTrace, payloads_before: List[SitePayload]) -> MethodResult:
    payloads, trace = run_round(transport, _request(TaskType.CSL_GRADIENT, opts, beta_bar=beta_bar), site_ids, trace)
    inputs = CslInputs(beta_bar=beta_bar, central=central,
                       gradients=[csl_gradient(central, beta_bar)] + [pl.gradient for pl in payloads],
                       sizes=[central.n] + [pl.n for pl in payloads])
    beta = csl_fit(inputs)
    cov = csl_covariance(inputs, beta)
    return MethodResult(method=method, beta=beta, covariance=cov, wald=_wald_list(beta, cov, opts), trace=trace,
                        central_fit=central_fit, payloads=payloads_before + payloads, csl_inputs=inputs)


def run_csl1(central: SiteData, transport: Transport, site_ids: Sequence[int], opts: MethodOptions) -> MethodResult:
    """CSL з початковою точкою в OLS центрального сайту: один раунд"""
    central_fit = local_mle(central)
    return _run_csl(MethodName.CSL1, central, central_fit, central_fit.beta_hat, transport, site_ids, opts,
                    CommTrace(), [])


def run_csla(central: SiteData, transport: Transport, site_ids: Sequence[int], opts: MethodOptions) -> MethodResult:
    """CSL з початковою точкою AVGM: раунд MLE, потім раунд градієнтів"""
    central_fit = local_mle(central)
    payloads, trace = run_round(transport, _request(TaskType.MLE_ONLY, opts), site_ids)
    beta_bar = avgm([central_fit.beta_hat] + [pl.beta_hat for pl in payloads])
    return _run_csl(MethodName.CSLA, central, central_fit, beta_bar, transport, site_ids, opts, trace, payloads)


def run_cedar(central: SiteData, transport: Transport, site_ids: Sequence[int], opts: MethodOptions) -> MethodResult:
    central_fit = local_mle(central)
    task = TaskType.MLE_PLUS_POSTERIOR if opts.K > 0 else TaskType.MLE_ONLY
    payloads, trace = run_round(transport, _request(task, opts), site_ids)
    fit = cedar_fit(central_fit, payloads, opts.cedar)
    cov = beta_covariance(fit)
    return MethodResult(method=MethodName.CEDAR, beta=fit.beta, covariance=cov, wald=_wald_list(fit.beta, cov, opts),
                        trace=trace, fit=fit, central_fit=central_fit, payloads=payloads)


DRIVERS = {
    MethodName.AVGM: run_avgm,
    MethodName.OPT: run_opt,
    MethodName.CSL1: run_csl1,
    MethodName.CSLA: run_csla,
    MethodName.CEDAR: run_cedar,
}


def run_method(method: MethodName, central: SiteData, transport: Transport,
               site_ids: Sequence[int], options: Optional[MethodOptions] = None) -> MethodResult:
    """Виконати метод через протокол; site_ids перелічує віддалені сайти"""
    options = options or MethodOptions()
    method = MethodName(method)
    if central.site_id in site_ids:
        raise InvalidConfigError(f"central site {central.site_id} must not be listed among remote sites")
    result = DRIVERS[method](central, transport, site_ids, options)
    logger.info(f"{method.value}: M={len(site_ids) + 1}, rounds={result.trace.rounds}")
    return result


def sparse_path(result: MethodResult, fractions: Sequence[float], cedar_opts: Optional[CedarOptions] = None) -> List[np.ndarray]:
    """
    Розріджені оцінки для відносної сітки без додаткової комунікації.

    Для AVGM це жорсткий поріг fraction * max|beta|, для інших методів
    L1 штраф lambda = fraction * lambda_max.
    """
    method = result.method
    if method == MethodName.AVGM:
        return hard_threshold_path(result.beta, fractions)
    if method == MethodName.OPT:
        lam_max = opt_lambda_max(result.stats)
        return [opt_lasso(result.stats, f * lam_max) for f in fractions]
    if method in (MethodName.CSL1, MethodName.CSLA):
        lam_max = csl_lambda_max(result.csl_inputs)
        return [csl_lasso(result.csl_inputs, f * lam_max) for f in fractions]

    base = cedar_opts or CedarOptions()
    lam_max, zero_state = penalty_lambda_max(result.central_fit, result.payloads, base)
    betas = []
    for f in fractions:
        if f == 0:
            betas.append(np.asarray(result.fit.beta))
            continue
        opts = base.model_copy(update={"penalty_lambda": f * lam_max})
        # від lambda_max починаємо з нерухомої точки beta = 0
        init = zero_state if f >= 1 else None
        betas.append(cedar_fit(result.central_fit, result.payloads, opts, init=init).beta)
    return betas
