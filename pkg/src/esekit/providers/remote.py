"""HTTP client implementing every provider contract over the wire.

Protocol (HTTP/1.1, JSON bodies, UTF-8):

- POST /v1/embed                {"texts": [str]}                       -> {"vectors": [[number]]}
- POST /v1/next_token_logprobs  {"prefix_tokens": [str], "allowed": [str]} -> {"logprobs": {str: number}}
- POST /v1/score_continuation   {"prefix": str, "continuation": str}   -> {"logprob": number, "token_count": int}
- POST /v1/complete             {"prompt": str, "max_tokens": int}     -> {"text": str}
- POST /v1/rank_similar         {"candidates": [str], "seeds": [str], "top": int} -> {"entities": [str]}

Errors arrive as non-200 responses with ``{"error": str, "request_id":
str}``. All five calls are pure scoring requests, hence idempotent and
safe to retry on transport failures and 5xx replies.
"""
from __future__ import annotations

import asyncio
import logging
import uuid
from dataclasses import dataclass
from typing import Sequence

import httpx
import numpy as np

from ..errors import ProtocolError, ProviderError
from ..errors import UsageError
from .base import DEFAULT_MASK_TOKEN

log = logging.getLogger(__name__)


class AsgiSyncTransport(httpx.BaseTransport):
    """Runs an ASGI app behind the synchronous httpx client.

    Each request spins a private event loop, which is plenty for CLI and
    test traffic and keeps the in-process default free of real sockets.
    """

    def __init__(self, app):
        self._transport = httpx.ASGITransport(app=app)

    def handle_request(self, request: httpx.Request) -> httpx.Response:
        async def call() -> httpx.Response:
            response = await self._transport.handle_async_request(request)
            body = b"".join([chunk async for chunk in response.stream])
            return httpx.Response(
                status_code=response.status_code,
                headers=response.headers,
                content=body,
                request=request,
            )

        return asyncio.run(call())


@dataclass(frozen=True)
class ProviderEndpoint:
    base_url: str
    timeout: float = 10.0
    retry: int = 2
    auth_token: str | None = None

    def __post_init__(self):
        if self.timeout <= 0:
            raise UsageError(f"timeout must be > 0, got {self.timeout}")
        if self.retry < 0:
            raise UsageError(f"retry count must be >= 0, got {self.retry}")


class RemoteProvider:
    """All four provider capabilities over one endpoint.

    A transport can be injected for in-process loopback tests; otherwise
    a plain HTTP client is used.
    """

    def __init__(
        self,
        endpoint: ProviderEndpoint,
        transport: httpx.BaseTransport | None = None,
        mask_token: str = DEFAULT_MASK_TOKEN,
    ):
        self.endpoint = endpoint
        self.mask_token = mask_token
        headers = {}
        if endpoint.auth_token:
            headers["Authorization"] = f"Bearer {endpoint.auth_token}"
        self._client = httpx.Client(
            base_url=endpoint.base_url,
            timeout=endpoint.timeout,
            transport=transport,
            headers=headers,
        )

    def close(self) -> None:
        self._client.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _post(self, path: str, payload: dict) -> tuple[dict, str]:
        request_id = uuid.uuid4().hex
        last_exc: Exception | None = None
        response = None
        for attempt in range(self.endpoint.retry + 1):
            try:
                response = self._client.post(path, json=payload, headers={"X-Request-Id": request_id})
            except httpx.TransportError as exc:
                last_exc = exc
                log.warning("request %s to %s failed (%s), attempt %d", request_id, path, exc, attempt + 1)
                continue
            if response.status_code >= 500 and attempt < self.endpoint.retry:
                log.warning("request %s to %s got %d, retrying", request_id, path, response.status_code)
                continue
            break
        if response is None:
            raise ProviderError(f"transport failure calling {path}: {last_exc}", request_id=request_id)
        if response.status_code != 200:
            try:
                body = response.json()
                message = body["error"]
                request_id = body.get("request_id", request_id)
            except Exception:
                raise ProtocolError(
                    f"non-200 reply from {path} without an error envelope (status {response.status_code})",
                    request_id=request_id,
                ) from None
            raise ProviderError(f"{path}: {message}", request_id=request_id)
        try:
            data = response.json()
        except Exception:
            raise ProtocolError(f"reply from {path} is not JSON", request_id=request_id) from None
        if not isinstance(data, dict):
            raise ProtocolError(f"reply from {path} is not a JSON object", request_id=request_id)
        return data, request_id

    def _field(self, data: dict, name: str, request_id: str, path: str):
        if name not in data:
            raise ProtocolError(f"reply from {path} missing field {name!r}", request_id=request_id)
        return data[name]

    # --- provider contracts ---------------------------------------------------

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        data, rid = self._post("/v1/embed", {"texts": list(texts)})
        vectors = self._field(data, "vectors", rid, "/v1/embed")
        try:
            out = [np.asarray(v, dtype=np.float64) for v in vectors]
        except (TypeError, ValueError):
            raise ProtocolError("field 'vectors' is not a list of number lists", request_id=rid) from None
        if len(out) != len(texts) or any(v.ndim != 1 for v in out):
            raise ProtocolError("field 'vectors' has the wrong shape", request_id=rid)
        return out

    def next_token_logprobs(self, prefix_tokens: Sequence[str], allowed: Sequence[str]) -> dict[str, float]:
        data, rid = self._post(
            "/v1/next_token_logprobs",
            {"prefix_tokens": list(prefix_tokens), "allowed": list(allowed)},
        )
        logprobs = self._field(data, "logprobs", rid, "/v1/next_token_logprobs")
        if not isinstance(logprobs, dict) or not all(
            isinstance(k, str) and isinstance(v, (int, float)) for k, v in logprobs.items()
        ):
            raise ProtocolError("field 'logprobs' is not a token-to-number map", request_id=rid)
        return {k: float(v) for k, v in logprobs.items()}

    def score_continuation(self, prefix: str, continuation: str) -> tuple[float, int]:
        data, rid = self._post(
            "/v1/score_continuation", {"prefix": prefix, "continuation": continuation}
        )
        logprob = self._field(data, "logprob", rid, "/v1/score_continuation")
        token_count = self._field(data, "token_count", rid, "/v1/score_continuation")
        if not isinstance(logprob, (int, float)) or not isinstance(token_count, int):
            raise ProtocolError("fields 'logprob'/'token_count' have the wrong types", request_id=rid)
        return float(logprob), token_count

    def complete(self, prompt: str, max_tokens: int) -> str:
        data, rid = self._post("/v1/complete", {"prompt": prompt, "max_tokens": max_tokens})
        text = self._field(data, "text", rid, "/v1/complete")
        if not isinstance(text, str):
            raise ProtocolError("field 'text' is not a string", request_id=rid)
        return text

    def rank_similar(self, candidates: Sequence[str], seeds: Sequence[str], top: int) -> list[str]:
        data, rid = self._post(
            "/v1/rank_similar",
            {"candidates": list(candidates), "seeds": list(seeds), "top": top},
        )
        entities = self._field(data, "entities", rid, "/v1/rank_similar")
        if not isinstance(entities, list) or not all(isinstance(e, str) for e in entities):
            raise ProtocolError("field 'entities' is not a list of strings", request_id=rid)
        return entities
