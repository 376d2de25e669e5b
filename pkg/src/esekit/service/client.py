"""Synchronous client for the engine service.

By default the client drives an in-process application instance through
an ASGI transport, so the command line works with no server running.
Pass ``server`` to talk to a deployed instance instead; the request and
response bytes are identical either way.
"""
from __future__ import annotations

import httpx

from ..errors import DataValidationError, EsekitError, ProtocolError, ProviderError, UsageError
from ..providers.remote import AsgiSyncTransport

_KIND_ERRORS = {
    "usage": UsageError,
    "validation": DataValidationError,
}


class EngineClient:
    def __init__(
        self,
        server: str | None = None,
        app=None,
        seed: int = 0,
        dim: int = 64,
        tokenizer_kind: str = "whitespace",
        timeout: float = 60.0,
    ):
        if server:
            self._client = httpx.Client(base_url=server.rstrip("/"), timeout=timeout)
        else:
            if app is None:
                from .app import create_app

                app = create_app(seed=seed, dim=dim, tokenizer_kind=tokenizer_kind)
            self._client = httpx.Client(
                base_url="http://engine.local",
                transport=AsgiSyncTransport(app),
                timeout=timeout,
            )

    def post(self, path: str, payload: dict) -> dict:
        try:
            response = self._client.post(path, json=payload)
        except httpx.HTTPError as exc:
            raise ProviderError(f"cannot reach engine service: {exc}") from None
        return self._reply(path, response)

    def get(self, path: str) -> dict:
        try:
            response = self._client.get(path)
        except httpx.HTTPError as exc:
            raise ProviderError(f"cannot reach engine service: {exc}") from None
        return self._reply(path, response)

    def _reply(self, path: str, response: httpx.Response) -> dict:
        if response.status_code == 200:
            reply = response.json()
            if not isinstance(reply, dict):
                raise ProtocolError(f"reply from {path} is not a JSON object")
            return reply
        try:
            envelope = response.json()
            message = envelope["error"]
            request_id = envelope.get("request_id")
            kind = envelope.get("kind", "internal")
        except (ValueError, KeyError, TypeError):
            raise ProtocolError(
                f"engine returned status {response.status_code} from {path} without an error envelope"
            ) from None
        error_type = _KIND_ERRORS.get(kind)
        if error_type is not None:
            raise error_type(message)
        if kind == "provider":
            raise ProviderError(message, request_id=request_id)
        raise EsekitError(f"{message} (request {request_id})")

    def close(self) -> None:
        self._client.close()

    def __enter__(self) -> "EngineClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
