"""FastAPI application serving the provider wire protocol from trained
checkpoints.

One process serves one encoder and one generator on one port. Each model
runs behind a gate: a lock serializes forward passes (the models are not
safe under concurrent calls) and a bounded wait queue sheds load with a
503 instead of stacking requests without limit.

Every error leaves as a non-200 JSON envelope
``{"error": str, "request_id": str, "kind": str}`` where ``kind`` is one
of ``usage``, ``validation``, ``busy``, ``internal``.
"""
from __future__ import annotations

import logging
import threading
import uuid
from contextlib import contextmanager

import torch
import torch.nn.functional as F
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from . import __version__
from .errors import ConfigError, DataError, ServiceBusy, SidecarError
from .models import SidecarEncoder, SidecarGenerator, load_encoder, load_generator

log = logging.getLogger(__name__)

DEFAULT_MAX_BATCH = 64
DEFAULT_MAX_WAITING = 32


class ModelGate:
    """Serializes access to one model with a bounded wait queue."""

    def __init__(self, name: str, max_waiting: int = DEFAULT_MAX_WAITING):
        self.name = name
        self._lock = threading.Lock()
        self._slots = threading.BoundedSemaphore(max_waiting)

    @contextmanager
    def hold(self):
        if not self._slots.acquire(blocking=False):
            raise ServiceBusy(f"{self.name} queue is full, retry later")
        try:
            with self._lock:
                yield
        finally:
            self._slots.release()


class EmbedIn(BaseModel):
    texts: list[str]


class LogprobsIn(BaseModel):
    prefix_tokens: list[str]
    allowed: list[str]


class ScoreContinuationIn(BaseModel):
    prefix: str
    continuation: str


class CompleteIn(BaseModel):
    prompt: str
    max_tokens: int = 64


class RankSimilarIn(BaseModel):
    candidates: list[str]
    seeds: list[str]
    top: int


def _request_id(request: Request) -> str:
    return request.headers.get("X-Request-Id") or uuid.uuid4().hex


def _envelope(request: Request, status: int, message: str, kind: str) -> JSONResponse:
    return JSONResponse(
        status_code=status,
        content={"error": message, "request_id": _request_id(request), "kind": kind},
    )


def _resolve(model, loader, label: str):
    if isinstance(model, (str,)) or hasattr(model, "__fspath__"):
        loaded, meta = loader(model)
        return loaded, meta
    if model is None:
        raise ConfigError(f"serve needs a {label} checkpoint")
    return model, {}


def create_app(
    encoder: SidecarEncoder | str | None,
    generator: SidecarGenerator | str | None,
    max_batch: int = DEFAULT_MAX_BATCH,
    max_waiting: int = DEFAULT_MAX_WAITING,
    device: str = "cpu",
    mask_token: str | None = None,
) -> FastAPI:
    """Build the app from checkpoint paths or already-loaded models."""
    if max_batch < 1:
        raise ConfigError(f"max_batch must be positive, got {max_batch}")
    encoder, encoder_meta = _resolve(encoder, load_encoder, "encoder")
    generator, generator_meta = _resolve(generator, load_generator, "generator")
    if mask_token is not None and encoder.vocab.mask_token != mask_token:
        raise ConfigError(
            f"encoder was trained with mask token {encoder.vocab.mask_token!r}, "
            f"serve config expects {mask_token!r}"
        )
    if encoder.vocab.mask_token != generator.vocab.mask_token:
        raise ConfigError("encoder and generator checkpoints disagree on the mask token")
    try:
        encoder.to(device)
        generator.to(device)
    except RuntimeError as exc:
        raise ConfigError(f"cannot move models to device {device!r}: {exc}") from None
    encoder.eval()
    generator.eval()

    app = FastAPI(title="esekit-sidecar", version=__version__)
    app.state.encoder = encoder
    app.state.generator = generator
    app.state.meta = {"encoder": encoder_meta, "generator": generator_meta}
    encoder_gate = ModelGate("encoder", max_waiting)
    generator_gate = ModelGate("generator", max_waiting)

    @app.exception_handler(ServiceBusy)
    async def busy_error(request: Request, exc: ServiceBusy):
        return _envelope(request, 503, str(exc), "busy")

    @app.exception_handler(DataError)
    async def data_error(request: Request, exc: DataError):
        return _envelope(request, 422, str(exc), "validation")

    @app.exception_handler(SidecarError)
    async def sidecar_error(request: Request, exc: SidecarError):
        return _envelope(request, 400, str(exc), "usage")

    @app.exception_handler(RequestValidationError)
    async def body_error(request: Request, exc: RequestValidationError):
        problems = "; ".join(
            f"{'.'.join(str(p) for p in e.get('loc', ()))}: {e.get('msg', 'invalid')}"
            for e in exc.errors()[:5]
        )
        return _envelope(request, 400, f"invalid request body: {problems}", "usage")

    @app.exception_handler(Exception)
    async def internal_error(request: Request, exc: Exception):
        log.exception("unhandled error serving %s", request.url.path)
        return _envelope(request, 500, f"internal error: {type(exc).__name__}", "internal")

    @app.get("/health")
    def health():
        return {
            "status": "ok",
            "version": __version__,
            "encoder_dim": encoder.dim,
            "generator_vocab": len(generator.vocab),
        }

    @app.post("/v1/embed")
    def v1_embed(body: EmbedIn):
        vectors: list[list[float]] = []
        with encoder_gate.hold(), torch.no_grad():
            for start in range(0, len(body.texts), max_batch):
                chunk = body.texts[start : start + max_batch]
                vectors.extend(encoder.embed_texts(chunk).tolist())
        return {"vectors": vectors}

    @app.post("/v1/next_token_logprobs")
    def v1_logprobs(body: LogprobsIn):
        with generator_gate.hold():
            return {"logprobs": generator.next_token_logprobs(body.prefix_tokens, body.allowed)}

    @app.post("/v1/score_continuation")
    def v1_score(body: ScoreContinuationIn):
        with generator_gate.hold():
            logprob, token_count = generator.score_continuation(body.prefix, body.continuation)
        return {"logprob": logprob, "token_count": token_count}

    @app.post("/v1/complete")
    def v1_complete(body: CompleteIn):
        with generator_gate.hold():
            return {"text": generator.complete(body.prompt, max_tokens=body.max_tokens)}

    @app.post("/v1/rank_similar")
    def v1_rank(body: RankSimilarIn):
        if body.top < 1:
            raise ConfigError(f"top must be >= 1, got {body.top}")
        if not body.seeds:
            raise ConfigError("no seeds to rank against")
        names = list(dict.fromkeys(body.candidates))
        if not names:
            return {"entities": []}
        with encoder_gate.hold(), torch.no_grad():
            vecs = encoder.embed_texts(names + list(body.seeds))
        cand_vecs, seed_vecs = vecs[: len(names)], vecs[len(names) :]
        sims = F.cosine_similarity(cand_vecs.unsqueeze(1), seed_vecs.unsqueeze(0), dim=-1)
        scores = sims.mean(dim=1)
        scored = sorted(zip(names, scores.tolist()), key=lambda item: (-item[1], item[0]))
        return {"entities": [name for name, _ in scored[: body.top]]}

    return app
