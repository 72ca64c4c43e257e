# -*- coding: utf-8 -*-
"""
EM агрегатор центрального сайту.

Матриці Грама віддалених сайтів S_m не спостерігаються і вважаються пропущеними
даними з Wishart(Sigma, n_m). E-крок замінює їх умовним середнім
(n_m + K_m + 1)(Sigma^{-1} + A_m A_m')^{-1}, M-крок оновлює (beta, sigma^2, Sigma)
у замкненій формі або проксимальним градієнтом при L1 штрафі.
"""

import logging
import time
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import multigammaln

from .errors import DegeneratePosteriorError, DimensionMismatchError, NumericalError
from .estimation import local_mle
from .linalg import logdet, spd_cholesky, spd_inverse, spd_solve, symmetrize
from .models import (
    BlockForm,
    CedarFit,
    CedarOptions,
    EmState,
    EstepMode,
    LocalFit,
    SiteData,
    SitePayload,
)
from .sparse import lambda_max, penalized_quadratic

logger = logging.getLogger(__name__)

SiteSummary = Union[LocalFit, SitePayload]


def _nu(payload: SitePayload) -> int:
    return payload.n + payload.K + 1


def _uses_woodbury(payload: SitePayload, mode: EstepMode) -> bool:
    block = payload.block
    if block is not None and block.form == BlockForm.GRAM:
        return False
    if mode == EstepMode.WOODBURY:
        return True
    if mode == EstepMode.DIRECT:
        return False
    return payload.K + 1 <= payload.p


def _precision(Sigma_inv: np.ndarray, a: np.ndarray, payload: SitePayload) -> np.ndarray:
    """Sigma^{-1} + a a' + BB'/psi"""
    P = Sigma_inv + np.outer(a, a)
    if payload.block is not None and payload.K > 0:
        P = P + payload.block.normalized_gram()
    return symmetrize(P)


def _expected_gram(state: EmState, Sigma_inv: np.ndarray, payload: SitePayload,
                   mode: EstepMode, iteration: int = None) -> np.ndarray:
    a = (payload.beta_hat - state.beta) / np.sqrt(state.sigma_sq)
    context = dict(site_id=payload.site_id, iteration=iteration)
    if _uses_woodbury(payload, mode):
        cols = [a[:, None]]
        if payload.block is not None and payload.K > 0:
            cols.append(payload.block.data / np.sqrt(payload.block.psi))
        A = np.hstack(cols)
        SA = state.Sigma @ A
        C = np.eye(A.shape[1]) + A.T @ SA
        V = state.Sigma - SA @ spd_solve(symmetrize(C), SA.T, what="capacitance matrix", **context)
    else:
        V = spd_inverse(_precision(Sigma_inv, a, payload), what="posterior precision", **context)
    S_hat = _nu(payload) * symmetrize(V)
    if not np.all(np.isfinite(S_hat)):
        raise NumericalError("imputed Gram matrix is not finite", **context)
    return S_hat


def e_step(state: EmState, payloads: Sequence[SitePayload],
           mode: EstepMode = EstepMode.AUTO, iteration: int = None) -> List[np.ndarray]:
    """
    Умовні середні S_m для віддалених сайтів; S_hat[0] (центральний сайт) без змін.

    n, K та psi беруться з повідомлення кожного сайту.
    """
    Sigma_inv = spd_inverse(state.Sigma, what="Sigma", iteration=iteration)
    remote = [_expected_gram(state, Sigma_inv, payload, mode, iteration) for payload in payloads]
    return [np.asarray(state.S_hat[0])] + remote


def _beta_update(S_hat: Sequence[np.ndarray], sites: Sequence[SiteSummary], iteration: int = None) -> np.ndarray:
    H = sum(S_hat)
    h = sum(S @ site.beta_hat for S, site in zip(S_hat, sites))
    return spd_solve(symmetrize(H), h, what="sum of Gram matrices", iteration=iteration)


def _sigma_sq_update(beta: np.ndarray, S_hat: Sequence[np.ndarray], sites: Sequence[SiteSummary]) -> float:
    N = sum(site.n for site in sites)
    total = 0.0
    for S, site in zip(S_hat, sites):
        d = site.beta_hat - beta
        total += float(d @ S @ d) + site.n * site.sigma_hat_sq
    return total / N


def m_step(state: EmState, sites: Sequence[SiteSummary], iteration: int = None):
    """
    (beta, sigma^2, Sigma) у замкненій формі; sites[0] є центральним сайтом.

    beta  = (sum S_m)^{-1} sum S_m beta_hat_m
    sigma^2 = (1/N) sum ((beta_hat_m - beta)' S_m (beta_hat_m - beta) + n_m sigma_hat_m^2)
    Sigma = (1/N) sum S_m
    """
    beta = _beta_update(state.S_hat, sites, iteration)
    N = sum(site.n for site in sites)
    return beta, _sigma_sq_update(beta, state.S_hat, sites), symmetrize(sum(state.S_hat) / N)


def sparse_beta_step(state: EmState, sites: Sequence[SiteSummary], lam: float) -> np.ndarray:
    """min_beta 1/2 sum (beta - beta_hat_m)' S_m (beta - beta_hat_m) + lam * sigma^2 * ||beta||_1"""
    H = symmetrize(sum(state.S_hat))
    h = sum(S @ site.beta_hat for S, site in zip(state.S_hat, sites))
    return penalized_quadratic(H, h, lam * state.sigma_sq, beta0=state.beta)


def marginal_loglik(beta: np.ndarray, sigma_sq: float, Sigma: np.ndarray,
                    central: LocalFit, payloads: Sequence[SitePayload],
                    include_constants: bool = False) -> float:
    """
    Маргінальна логарифмічна правдоподібність після інтегрування S_2..S_M.

    Константи, що не залежать від (beta, sigma^2, Sigma), відкидаються; з
    include_constants=True додаються log|S_1| та нормувальні константи Wishart.
    """
    if not sigma_sq > 0:
        raise NumericalError(f"sigma^2 must be positive, got {sigma_sq}")
    sites = [central] + list(payloads)
    N = sum(site.n for site in sites)
    p = central.p
    log_det_Sigma = logdet(Sigma, what="Sigma")
    Sigma_inv = spd_inverse(Sigma, what="Sigma")

    d1 = central.beta_hat - beta
    value = (-0.5 * N * np.log(sigma_sq)
             - 0.5 * sum(site.n * site.sigma_hat_sq for site in sites) / sigma_sq
             - 0.5 * N * log_det_Sigma
             - 0.5 * float(d1 @ central.S @ d1) / sigma_sq
             - 0.5 * float(np.sum(Sigma_inv * central.S)))

    for payload in payloads:
        a = (payload.beta_hat - beta) / np.sqrt(sigma_sq)
        nu = _nu(payload)
        value -= 0.5 * nu * logdet(_precision(Sigma_inv, a, payload), what="posterior precision",
                                   site_id=payload.site_id)
        if include_constants:
            value += 0.5 * nu * p * np.log(2.0) + multigammaln(0.5 * nu, p)

    if include_constants:
        value += 0.5 * (central.n - p) * logdet(central.S, what="central Gram matrix")

    if not np.isfinite(value):
        raise NumericalError("marginal loglikelihood is not finite")
    return float(value)


def _rel_change(new, old) -> float:
    diff = float(np.linalg.norm(np.atleast_1d(new) - np.atleast_1d(old)))
    if diff == 0.0:
        return 0.0
    return diff / max(float(np.linalg.norm(np.atleast_1d(old))), 1e-12)


def check_payloads(p: int, payloads: Sequence[SitePayload]) -> None:
    """Однакова розмірність і унікальні ідентифікатори сайтів"""
    seen = set()
    for payload in payloads:
        if payload.p != p:
            raise DimensionMismatchError(f"site {payload.site_id} sent p={payload.p}, central site has p={p}")
        if payload.site_id in seen:
            raise DimensionMismatchError(f"duplicate payload from site {payload.site_id}")
        seen.add(payload.site_id)


def cedar_fit(central: Union[SiteData, LocalFit], payloads: Sequence[SitePayload],
              opts: CedarOptions = None, init: Optional[EmState] = None) -> CedarFit:
    """
    Повний цикл EM до збіжності.

    Ініціалізація: beta = середнє локальних MLE, Sigma = S_1/n_1,
    sigma^2 = (1/N) sum n_m sigma_hat_m^2. init замінює цю точку старту.
    """
    opts = opts or CedarOptions()
    central_fit = central if isinstance(central, LocalFit) else local_mle(central)
    payloads = sorted(payloads, key=lambda pl: pl.site_id)
    check_payloads(central_fit.p, payloads)
    sites: List[SiteSummary] = [central_fit] + payloads
    N = sum(site.n for site in sites)
    lam = opts.penalty_lambda

    sigma_sq = sum(site.n * site.sigma_hat_sq for site in sites) / N
    if not sigma_sq > 0:
        raise DegeneratePosteriorError("every site fits its data exactly, residual variance is zero")
    Sigma = symmetrize(central_fit.S / central_fit.n)
    spd_cholesky(Sigma, what="initial Sigma", iteration=0)
    state = EmState(beta=np.mean([site.beta_hat for site in sites], axis=0), sigma_sq=sigma_sq,
                    Sigma=Sigma, S_hat=[central_fit.S] * len(sites))
    if init is not None:
        state = init.model_copy(update={"S_hat": [central_fit.S] * len(sites)})

    def objective(s: EmState) -> Tuple[float, float]:
        l = marginal_loglik(s.beta, s.sigma_sq, s.Sigma, central_fit, payloads)
        return l, l - lam * float(np.abs(s.beta).sum())

    loglik, obj = objective(state)
    trace = [loglik]
    converged = False
    iteration = 0
    started = time.perf_counter()

    for iteration in range(1, opts.max_iters + 1):
        S_hat = e_step(state, payloads, opts.estep_mode, iteration)
        expected = EmState(beta=state.beta, sigma_sq=state.sigma_sq, Sigma=state.Sigma, S_hat=S_hat)
        if lam > 0:
            beta = sparse_beta_step(expected, sites, lam)
        else:
            beta = _beta_update(S_hat, sites, iteration)
        sigma_sq = _sigma_sq_update(beta, S_hat, sites)
        Sigma = symmetrize(sum(S_hat) / N)
        if not sigma_sq > 0:
            raise NumericalError("sigma^2 collapsed to zero", iteration=iteration)
        spd_cholesky(Sigma, what="Sigma", iteration=iteration)

        new_state = EmState(beta=beta, sigma_sq=sigma_sq, Sigma=Sigma, S_hat=S_hat)
        new_loglik, new_obj = objective(new_state)
        change = max(_rel_change(beta, state.beta),
                     abs(sigma_sq - state.sigma_sq) / state.sigma_sq,
                     _rel_change(Sigma, state.Sigma),
                     abs(new_obj - obj) / max(abs(obj), 1.0))
        if new_obj < obj - 1e-8 * max(abs(obj), 1.0):
            logger.warning(f"EM objective decreased at iteration {iteration}: {obj:.10g} -> {new_obj:.10g}")
        state, loglik, obj = new_state, new_loglik, new_obj
        trace.append(loglik)
        if change < opts.tol:
            converged = True
            break

    elapsed = (time.perf_counter() - started) * 1000
    if converged:
        logger.info(f"CEDAR converged in {iteration} iterations ({elapsed:.1f} ms), M={len(sites)}, lambda={lam}")
    else:
        logger.warning(f"CEDAR stopped at max_iters={opts.max_iters} without convergence (tol={opts.tol})")

    return CedarFit(beta=state.beta, sigma_sq=state.sigma_sq, Sigma=state.Sigma, S_hat=list(state.S_hat),
                    iterations=iteration, final_loglik=loglik, converged=converged, n_total=N,
                    penalty_lambda=lam, loglik_trace=trace)


def null_state(central: Union[SiteData, LocalFit], payloads: Sequence[SitePayload],
               opts: CedarOptions = None) -> EmState:
    """Нерухома точка EM з beta = 0: оновлюються лише sigma^2 та Sigma"""
    opts = opts or CedarOptions()
    central_fit = central if isinstance(central, LocalFit) else local_mle(central)
    payloads = sorted(payloads, key=lambda pl: pl.site_id)
    check_payloads(central_fit.p, payloads)
    sites: List[SiteSummary] = [central_fit] + payloads
    N = sum(site.n for site in sites)
    zero = np.zeros(central_fit.p)

    S_start = [central_fit.S] * len(sites)
    state = EmState(beta=zero, sigma_sq=_sigma_sq_update(zero, S_start, sites),
                    Sigma=symmetrize(central_fit.S / central_fit.n), S_hat=S_start)
    for iteration in range(1, opts.max_iters + 1):
        S_hat = e_step(state, payloads, opts.estep_mode, iteration)
        new = EmState(beta=zero, sigma_sq=_sigma_sq_update(zero, S_hat, sites),
                      Sigma=symmetrize(sum(S_hat) / N), S_hat=S_hat)
        change = max(abs(new.sigma_sq - state.sigma_sq) / state.sigma_sq, _rel_change(new.Sigma, state.Sigma))
        state = new
        if change < opts.tol:
            break
    return state


def penalty_lambda_max(central: Union[SiteData, LocalFit], payloads: Sequence[SitePayload],
                       opts: CedarOptions = None) -> Tuple[float, EmState]:
    """
    Найменше lambda, при якому beta = 0 є нерухомою точкою штрафованого ECM,
    разом з цією точкою. cedar_fit(..., init=state) з lambda >= lambda_max повертає нулі.
    """
    central_fit = central if isinstance(central, LocalFit) else local_mle(central)
    state = null_state(central_fit, payloads, opts)
    sites = [central_fit] + sorted(payloads, key=lambda pl: pl.site_id)
    h = sum(S @ site.beta_hat for S, site in zip(state.S_hat, sites))
    return lambda_max(h, state.sigma_sq), state
