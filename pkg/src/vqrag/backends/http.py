"""HTTP clients for the /v1/chat, /v1/embed, /v1/detect wire protocol."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import httpx
from pydantic import ValidationError

from ..domain import EmbeddingVector
from ..errors import ProtocolError, TransportError
from .protocol import (
    ChatBackend,
    ChatRequest,
    ChatResponse,
    DetectBackend,
    DetectRequest,
    DetectResponse,
    EmbedBackend,
    EmbedRequest,
    EmbedResponse,
    validate_chat_response,
    validate_detect_response,
)

BACKOFF_INITIAL_S = 0.5


@dataclass
class HttpBackendConfig:
    endpoint: str
    token: str | None = None
    timeout_s: float = 120.0
    # total attempts; retries happen only on transport errors and 5xx replies
    retry_count: int = 3
    sleeper: Callable[[float], None] = field(default=time.sleep, repr=False)

    def headers(self) -> dict[str, str]:
        h = {"Content-Type": "application/json"}
        if self.token:
            h["Authorization"] = f"Bearer {self.token}"
        return h


def _post_with_retry(cfg: HttpBackendConfig, path: str, body: str) -> dict:
    url = cfg.endpoint.rstrip("/") + path
    last_error: Exception | None = None
    for attempt in range(cfg.retry_count):
        if attempt:
            cfg.sleeper(BACKOFF_INITIAL_S * 2 ** (attempt - 1))
        try:
            resp = httpx.post(url, content=body, headers=cfg.headers(), timeout=cfg.timeout_s)
        except httpx.HTTPError as exc:
            last_error = exc
            continue
        if resp.status_code >= 500:
            last_error = TransportError(f"{url} replied {resp.status_code}")
            continue
        if resp.status_code >= 400:
            raise ProtocolError(f"{url} rejected request: {resp.status_code} {resp.text[:200]}")
        try:
            return resp.json()
        except ValueError as exc:
            raise ProtocolError(f"{url} replied with non-JSON body") from exc
    raise TransportError(f"{url} unreachable after {cfg.retry_count} attempts: {last_error}")


class HttpChatBackend(ChatBackend):
    def __init__(self, cfg: HttpBackendConfig):
        self.cfg = cfg

    def chat(self, req: ChatRequest) -> ChatResponse:
        data = _post_with_retry(self.cfg, "/v1/chat", req.to_json())
        try:
            resp = ChatResponse.model_validate(data)
        except ValidationError as exc:
            raise ProtocolError(f"malformed chat reply: {exc}") from exc
        return validate_chat_response(req, resp)


class HttpEmbedBackend(EmbedBackend):
    def __init__(self, cfg: HttpBackendConfig):
        self.cfg = cfg

    def embed(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        req = EmbedRequest(texts=tuple(texts))
        data = _post_with_retry(self.cfg, "/v1/embed", req.to_json())
        try:
            resp = EmbedResponse.model_validate(data)
        except ValidationError as exc:
            raise ProtocolError(f"malformed embed reply: {exc}") from exc
        if len(resp.vectors) != len(texts):
            raise ProtocolError(
                f"embed returned {len(resp.vectors)} vectors for {len(texts)} texts"
            )
        for v in resp.vectors:
            if len(v) != resp.dim:
                raise ProtocolError(f"vector of length {len(v)} in a dim={resp.dim} batch")
        return [EmbeddingVector.of(v) for v in resp.vectors]


class HttpDetectBackend(DetectBackend):
    def __init__(self, cfg: HttpBackendConfig):
        self.cfg = cfg

    def detect(self, req: DetectRequest) -> DetectResponse:
        data = _post_with_retry(self.cfg, "/v1/detect", req.to_json())
        try:
            resp = DetectResponse.model_validate(data)
        except ValidationError as exc:
            raise ProtocolError(f"malformed detect reply: {exc}") from exc
        return validate_detect_response(req, resp)
