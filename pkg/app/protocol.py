# -*- coding: utf-8 -*-
"""
Протокол обміну між центральним і віддаленими сайтами.

Двійковий формат повідомлення (версія 1, little-endian):

    magic "CDR1" | u16 schema_version | u16 flags | u32 site_id | u64 n | u32 p
    f8 sigma_hat_sq | f8[p] beta_hat
    [flags & BLOCK]    u8 form | u32 K | f8 psi | f8[p*K] стовпці (по рядках) або f8[p(p+1)/2] трикутник
    [flags & GRADIENT] f8[p]
    [flags & WALD]     u32 count | f8[count]
    [flags & STATS]    f8[p(p+1)/2] S | f8[p] X'y | f8 y'y | u64 n

Детальний опис у PROTOCOL.md.
"""

import json
import logging
import os
import shutil
import struct
from abc import ABC, abstractmethod
from enum import IntFlag
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import ValidationError

from .baselines import csl_gradient, local_wald
from .errors import IncompleteRoundError, InvalidConfigError, PayloadDecodeError
from .estimation import local_mle, sufficient_stats
from .linalg import pack_upper, unpack_upper
from .models import (
    BlockForm,
    CommTrace,
    SiteData,
    SitePayload,
    TaskRequest,
    TaskType,
)
from .posterior import build_block, derive_seed, draw_posterior

logger = logging.getLogger(__name__)

MAGIC = b"CDR1"
SCHEMA_VERSION = 1
_HEADER = struct.Struct("<4sHHIQI")
_BLOCK_HEADER = struct.Struct("<BId")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")
_F8 = np.dtype("<f8")

_FORM_TAGS = {BlockForm.COLUMNS: 0, BlockForm.GRAM: 1}
_TAG_FORMS = {v: k for k, v in _FORM_TAGS.items()}


class PayloadFlags(IntFlag):
    BLOCK = 1
    GRADIENT = 2
    WALD = 4
    STATS = 8


# Поля, які має містити відповідь на кожне завдання
TASK_FIELDS = {
    TaskType.MLE_ONLY: PayloadFlags(0),
    TaskType.MLE_PLUS_POSTERIOR: PayloadFlags.BLOCK,
    TaskType.CSL_GRADIENT: PayloadFlags.GRADIENT,
    TaskType.WALD_STATS: PayloadFlags.WALD,
    TaskType.SUFFICIENT_STATS: PayloadFlags.STATS,
}


def _floats(values) -> bytes:
    return np.ascontiguousarray(values, dtype=_F8).tobytes()


def payload_flags(payload: SitePayload) -> PayloadFlags:
    flags = PayloadFlags(0)
    if payload.block is not None:
        flags |= PayloadFlags.BLOCK
    if payload.gradient is not None:
        flags |= PayloadFlags.GRADIENT
    if payload.wald is not None:
        flags |= PayloadFlags.WALD
    if payload.stats is not None:
        flags |= PayloadFlags.STATS
    return flags


def encode_payload(payload: SitePayload) -> bytes:
    p = payload.p
    flags = payload_flags(payload)
    parts = [_HEADER.pack(MAGIC, SCHEMA_VERSION, int(flags), payload.site_id, payload.n, p),
             _floats([payload.sigma_hat_sq]), _floats(payload.beta_hat)]
    if payload.block is not None:
        block = payload.block
        parts.append(_BLOCK_HEADER.pack(_FORM_TAGS[block.form], block.K, block.psi))
        data = pack_upper(block.data) if block.form == BlockForm.GRAM else block.data
        parts.append(_floats(data))
    if payload.gradient is not None:
        parts.append(_floats(payload.gradient))
    if payload.wald is not None:
        parts.append(_U32.pack(payload.wald.size))
        parts.append(_floats(payload.wald))
    if payload.stats is not None:
        stats = payload.stats
        parts += [_floats(pack_upper(stats.S)), _floats(stats.Xty), _floats([stats.yty]), _U64.pack(stats.n)]
    return b"".join(parts)


class _Reader:
    """Послідовне читання буфера з перевіркою довжини"""

    def __init__(self, buf: bytes, site_id: Optional[int] = None):
        self.buf = memoryview(buf)
        self.pos = 0
        self.site_id = site_id

    def take(self, size: int) -> memoryview:
        if self.pos + size > len(self.buf):
            raise PayloadDecodeError(f"truncated payload: need {size} bytes at offset {self.pos}, "
                                     f"have {len(self.buf) - self.pos}", site_id=self.site_id)
        chunk = self.buf[self.pos:self.pos + size]
        self.pos += size
        return chunk

    def unpack(self, fmt: struct.Struct) -> tuple:
        return fmt.unpack(self.take(fmt.size))

    def floats(self, count: int) -> np.ndarray:
        values = np.frombuffer(self.take(count * _F8.itemsize), dtype=_F8).astype(np.float64)
        if not np.all(np.isfinite(values)):
            raise PayloadDecodeError("payload contains NaN or Inf", site_id=self.site_id)
        return values


def decode_payload(buf: bytes, site_id: Optional[int] = None) -> SitePayload:
    """Зворотне до encode_payload; site_id використовується лише в повідомленнях про помилки"""
    reader = _Reader(buf, site_id)
    magic, version, flags, sid, n, p = reader.unpack(_HEADER)
    reader.site_id = sid if site_id is None else site_id
    if magic != MAGIC:
        raise PayloadDecodeError(f"bad magic {magic!r}", site_id=reader.site_id)
    if version != SCHEMA_VERSION:
        raise PayloadDecodeError(f"unsupported schema version {version}, expected {SCHEMA_VERSION}",
                                 site_id=reader.site_id)
    flags = PayloadFlags(flags)
    sigma_hat_sq = float(reader.floats(1)[0])
    beta_hat = reader.floats(p)
    fields = {}
    if flags & PayloadFlags.BLOCK:
        tag, K, psi = reader.unpack(_BLOCK_HEADER)
        if not (np.isfinite(psi) and psi > 0):
            raise PayloadDecodeError(f"block scale psi must be finite and positive, got {psi}", site_id=reader.site_id)
        if tag not in _TAG_FORMS:
            raise PayloadDecodeError(f"unknown block form tag {tag}", site_id=reader.site_id)
        form = _TAG_FORMS[tag]
        if form == BlockForm.GRAM:
            data = unpack_upper(reader.floats(p * (p + 1) // 2), p)
        else:
            data = reader.floats(p * K).reshape(p, K)
        fields["block"] = dict(form=form, data=data, K=K, psi=psi)
    if flags & PayloadFlags.GRADIENT:
        fields["gradient"] = reader.floats(p)
    if flags & PayloadFlags.WALD:
        (count,) = reader.unpack(_U32)
        fields["wald"] = reader.floats(count)
    if flags & PayloadFlags.STATS:
        S = unpack_upper(reader.floats(p * (p + 1) // 2), p)
        Xty = reader.floats(p)
        yty = float(reader.floats(1)[0])
        (stats_n,) = reader.unpack(_U64)
        fields["stats"] = dict(S=S, Xty=Xty, yty=yty, n=stats_n)
    if reader.pos != len(reader.buf):
        raise PayloadDecodeError(f"{len(reader.buf) - reader.pos} trailing bytes", site_id=reader.site_id)
    try:
        return SitePayload(site_id=sid, n=n, p=p, beta_hat=beta_hat, sigma_hat_sq=sigma_hat_sq,
                           schema_version=version, **fields)
    except ValidationError as exc:
        raise PayloadDecodeError(f"invalid payload: {exc}", site_id=reader.site_id)


def encode_payload_json(payload: SitePayload) -> str:
    """JSON дзеркало для налагодження"""
    return payload.model_dump_json(exclude_none=True)


def decode_payload_json(text: str) -> SitePayload:
    try:
        payload = SitePayload.model_validate_json(text)
    except ValidationError as exc:
        raise PayloadDecodeError(f"invalid JSON payload: {exc}")
    if payload.schema_version != SCHEMA_VERSION:
        raise PayloadDecodeError(f"unsupported schema version {payload.schema_version}", site_id=payload.site_id)
    arrays = [payload.beta_hat] + [a for a in (payload.gradient, payload.wald) if a is not None]
    if payload.block is not None:
        arrays.append(payload.block.data)
    if not all(np.all(np.isfinite(a)) for a in arrays):
        raise PayloadDecodeError("payload contains NaN or Inf", site_id=payload.site_id)
    return payload


# --- Віддалений сайт ---

class SiteNode:
    """
    Обробник віддаленого сайту. Єдине місце, що має доступ до сирих даних сайту;
    назовні виходить лише SitePayload.
    """

    def __init__(self, data: SiteData):
        self._data = data
        self.site_id = data.site_id

    def handle(self, request: TaskRequest) -> SitePayload:
        data = self._data
        fit = local_mle(data)
        fields = {}
        if request.task == TaskType.MLE_PLUS_POSTERIOR:
            draws = draw_posterior(fit, request.K, request.psi, derive_seed(request.seed, self.site_id))
            fields["block"] = build_block(draws, fit)
        elif request.task == TaskType.CSL_GRADIENT:
            fields["gradient"] = csl_gradient(data, request.beta_bar)
        elif request.task == TaskType.WALD_STATS:
            hyp = request.hypothesis
            fields["wald"] = local_wald(fit, hyp.j if hyp else None, hyp.b0 if hyp else 0.0)
        elif request.task == TaskType.SUFFICIENT_STATS:
            fields["stats"] = sufficient_stats(data)
        logger.debug(f"Site {self.site_id} handled {request.task.value} (round {request.round_id})")
        return SitePayload(site_id=self.site_id, n=fit.n, p=fit.p, beta_hat=fit.beta_hat,
                           sigma_hat_sq=fit.sigma_hat_sq, **fields)


# --- Транспорт ---

class Transport(ABC):
    """Розсилає запит сайтам і збирає закодовані відповіді"""

    @abstractmethod
    def exchange(self, request: TaskRequest, site_ids: Sequence[int]) -> Dict[int, bytes]:
        ...


class InProcessTransport(Transport):
    def __init__(self, nodes: Sequence[SiteNode]):
        self.nodes = {node.site_id: node for node in nodes}

    def exchange(self, request: TaskRequest, site_ids: Sequence[int]) -> Dict[int, bytes]:
        return {sid: encode_payload(self.nodes[sid].handle(request)) for sid in site_ids if sid in self.nodes}


class FileDropTransport(Transport):
    """
    Обмін через файли: каталог round<R>/ з request.json, відповідями
    round<R>_site<ID>.payload та маркером DONE. Відсутній файл після DONE є помилкою.
    """

    DONE_MARKER = "DONE"

    def __init__(self, root: str, nodes: Sequence[SiteNode] = ()):
        self.root = root
        self.nodes = {node.site_id: node for node in nodes}
        os.makedirs(root, exist_ok=True)

    def round_dir(self, round_id: int) -> str:
        return os.path.join(self.root, f"round{round_id}")

    def payload_path(self, round_id: int, site_id: int) -> str:
        return os.path.join(self.round_dir(round_id), f"round{round_id}_site{site_id}.payload")

    def post_request(self, request: TaskRequest, site_ids: Sequence[int]) -> None:
        directory = self.round_dir(request.round_id)
        # відповіді попереднього запуску з тим самим номером раунду
        shutil.rmtree(directory, ignore_errors=True)
        os.makedirs(directory)
        body = {"request": json.loads(request.model_dump_json()), "site_ids": list(site_ids)}
        with open(os.path.join(directory, "request.json"), "w", encoding="utf-8") as f:
            json.dump(body, f, ensure_ascii=False, indent=2)

    def respond(self, node: SiteNode, round_id: int) -> None:
        """Сторона сайту: прочитати запит і залишити відповідь"""
        with open(os.path.join(self.round_dir(round_id), "request.json"), encoding="utf-8") as f:
            request = TaskRequest.model_validate(json.load(f)["request"])
        path = self.payload_path(round_id, node.site_id)
        tmp = path + ".tmp"
        with open(tmp, "wb") as f:
            f.write(encode_payload(node.handle(request)))
        os.replace(tmp, path)

    def mark_done(self, round_id: int) -> None:
        open(os.path.join(self.round_dir(round_id), self.DONE_MARKER), "w").close()

    def collect(self, round_id: int, site_ids: Sequence[int]) -> Dict[int, bytes]:
        directory = self.round_dir(round_id)
        if not os.path.exists(os.path.join(directory, self.DONE_MARKER)):
            raise IncompleteRoundError(round_id, site_ids)
        responses = {}
        for sid in site_ids:
            path = self.payload_path(round_id, sid)
            if os.path.exists(path):
                with open(path, "rb") as f:
                    responses[sid] = f.read()
        return responses

    def exchange(self, request: TaskRequest, site_ids: Sequence[int]) -> Dict[int, bytes]:
        self.post_request(request, site_ids)
        for sid in site_ids:
            if sid in self.nodes:
                self.respond(self.nodes[sid], request.round_id)
        self.mark_done(request.round_id)
        return self.collect(request.round_id, site_ids)


def _check_fields(request: TaskRequest, payload: SitePayload) -> None:
    expected = TASK_FIELDS[request.task]
    got = payload_flags(payload)
    if got != expected:
        raise PayloadDecodeError(f"task {request.task.value} expects fields {expected!r}, got {got!r}",
                                 site_id=payload.site_id)


def run_round(transport: Transport, request: TaskRequest, site_ids: Sequence[int],
              trace: Optional[CommTrace] = None) -> Tuple[List[SitePayload], CommTrace]:
    """
    Один раунд: розсилка запиту та збір відповідей від усіх сайтів.
    Без віддалених сайтів раунд не виконується і не рахується.
    """
    trace = trace if trace is not None else CommTrace()
    site_ids = sorted(site_ids)
    if not site_ids:
        return [], trace
    request = request.model_copy(update={"round_id": trace.rounds + 1})
    logger.info(f"Round {request.round_id}: {request.task.value} -> {len(site_ids)} sites")
    responses = transport.exchange(request, site_ids)
    missing = [sid for sid in site_ids if sid not in responses]
    if missing:
        raise IncompleteRoundError(request.round_id, missing)

    payloads = []
    for sid in site_ids:
        payload = decode_payload(responses[sid], site_id=sid)
        if payload.site_id != sid:
            raise PayloadDecodeError(f"payload claims site {payload.site_id}", site_id=sid)
        _check_fields(request, payload)
        payloads.append(payload)
    trace.record_round({sid: len(responses[sid]) for sid in site_ids})
    logger.info(f"Round {request.round_id} complete: {trace.bytes_per_round[-1]} bytes")
    return payloads, trace


def make_transport(kind: str, nodes: Sequence[SiteNode], root: Optional[str] = None) -> Transport:
    if kind == "inprocess":
        return InProcessTransport(nodes)
    if kind == "filedrop":
        if root is None:
            raise InvalidConfigError("file-drop transport needs a root directory")
        return FileDropTransport(root, nodes)
    raise InvalidConfigError(f"unknown transport {kind!r}")
