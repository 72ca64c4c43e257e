# -*- coding: utf-8 -*-
"""
FastAPI сервіс центрального сайту: облік приватності, аналіз CSV файлів сайтів
та симуляційні експерименти
"""

import datetime
import json
import logging
import sys
from typing import List, Optional

# Налаштування кодування для Windows (безпечний спосіб)
if sys.platform == "win32":
    try:
        import locale
        locale.setlocale(locale.LC_ALL, 'uk_UA.UTF-8')
    except Exception:
        pass

from fastapi import FastAPI, HTTPException
from fastapi.concurrency import run_in_threadpool
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field

from . import config
from .errors import CedarError
from .harness import analyze_csv, rows_to_frame, run_experiment, summarize
from .models import (
    CedarOptions,
    ExperimentConfig,
    MethodName,
    PrivacyBoundInputs,
    PrivacyReport,
    PrivacyScenario,
)
from .privacy import epsilon_delta_bound, expected_epsilon_bound, privacy_report

logger = logging.getLogger(__name__)

app = FastAPI(
    title="CEDAR central site",
    description="API розподіленої лінійної регресії з апостеріорними вибірками сайтів",
    version="2.0.0"
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

# Змінна для зберігання серверних логів
server_logs = []
MAX_SERVER_LOGS = 100


def add_server_log(log_type: str, message: str, details: dict = None):
    """Додавання логу до серверних логів"""
    global server_logs

    log_entry = {
        "timestamp": datetime.datetime.now().isoformat(),
        "type": log_type,
        "message": message,
        "details": details or {}
    }

    server_logs.append(log_entry)

    # Обмежуємо кількість логів до 100 записів
    if len(server_logs) > MAX_SERVER_LOGS:
        server_logs = server_logs[-MAX_SERVER_LOGS:]


def _fail(exc: Exception, what: str) -> HTTPException:
    """CedarError означає некоректні вхідні дані (422), решта є помилкою сервера"""
    add_server_log("error", f"{what}: {exc}", {"error": type(exc).__name__})
    if isinstance(exc, CedarError):
        logger.warning(f"{what}: {exc}")
        return HTTPException(status_code=422, detail=f"{what}: {str(exc)}")
    logger.exception(what)
    return HTTPException(status_code=500, detail=f"{what}: {str(exc)}")


class BoundsResponse(BaseModel):
    eps_forward: float
    eps_reverse: float
    eps_expected: Optional[float] = None


class AnalyzeRequest(BaseModel):
    """Файли сайтів у каталозі даних сервера (config.DATA_DIR); перший файл центральний"""
    paths: List[str] = Field(min_length=1)
    method: MethodName = MethodName.CEDAR
    K: int = Field(default=0, ge=0)
    psi: float = Field(default=config.DEFAULT_PSI, gt=0)
    seed: int = 0
    alpha: float = Field(default=0.05, gt=0, le=1)
    cedar: CedarOptions = Field(default_factory=CedarOptions)
    compare: bool = False
    repeats: int = Field(default=config.DEFAULT_COMPARE_REPEATS, ge=1)


@app.get("/")
async def read_root():
    """Інформація про сервіс"""
    return {
        "service": "cedar",
        "version": app.version,
        "methods": [m.value for m in MethodName],
        "endpoints": ["/api/privacy/bounds", "/api/privacy/epsilon", "/api/analyze",
                      "/api/experiment", "/api/server-logs"],
    }


@app.post("/api/privacy/bounds", response_model=BoundsResponse)
async def privacy_bounds(inputs: PrivacyBoundInputs):
    """Теоретичні межі epsilon для заданих c, xi2, lambda"""
    try:
        forward, reverse = epsilon_delta_bound(inputs)
        expected = expected_epsilon_bound(inputs.K, inputs.c, inputs.psi, inputs.delta)
        return BoundsResponse(eps_forward=forward, eps_reverse=reverse, eps_expected=expected)
    except Exception as e:
        raise _fail(e, "Помилка обчислення меж приватності")


@app.post("/api/privacy/epsilon", response_model=PrivacyReport)
async def privacy_epsilon(scenario: PrivacyScenario):
    """Монте-Карло мінімального epsilon з діагностикою меж"""
    try:
        report = await run_in_threadpool(privacy_report, scenario)
        add_server_log("info", "Обчислено рівень приватності",
                       {"n": scenario.n, "p": scenario.p, "K": scenario.K, "eps_mc": report.eps_mc})
        return report
    except Exception as e:
        raise _fail(e, "Помилка Монте-Карло приватності")


@app.post("/api/analyze")
async def analyze(request: AnalyzeRequest):
    """Запуск методу над CSV файлами сайтів через файловий транспорт"""
    try:
        result = await run_in_threadpool(
            analyze_csv, request.paths, request.method, K=request.K, psi=request.psi,
            seed=request.seed, alpha=request.alpha, cedar=request.cedar, data_dir=config.DATA_DIR,
            compare=request.compare, repeats=request.repeats
        )
        if request.compare:
            add_server_log("info", "Порівняння з OPT завершено", {"sites": len(request.paths), "repeats": request.repeats})
        else:
            add_server_log("info", f"Аналіз {request.method.value} завершено",
                           {"sites": len(request.paths), "rounds": result["trace"]["rounds"]})
        return result
    except Exception as e:
        raise _fail(e, "Помилка аналізу файлів сайтів")


@app.post("/api/experiment")
async def experiment(cfg: ExperimentConfig):
    """Симуляційний експеримент; повертає агреговану таблицю та сирі рядки"""
    try:
        rows = await run_in_threadpool(run_experiment, cfg)
        summary = summarize(rows)
        add_server_log("info", "Експеримент завершено",
                       {"rows": len(rows), "failed": int(sum(r.failed for r in rows))})
        return {
            "summary": json.loads(summary.to_json(orient="records")),
            "rows": json.loads(rows_to_frame(rows).to_json(orient="records")),
        }
    except Exception as e:
        raise _fail(e, "Помилка симуляційного експерименту")


@app.get("/api/server-logs")
async def get_server_logs():
    """Отримання серверних логів"""
    return {"logs": server_logs}


@app.post("/api/clear-logs")
async def clear_server_logs():
    """Очищення серверних логів"""
    global server_logs
    server_logs = []
    return {"message": "Логи очищено успішно"}
