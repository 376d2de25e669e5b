"""FastAPI application: engine endpoints plus the provider protocol.

The app holds loaded corpora and embedding stores in memory so an
expensive store build is paid once and served to many expansion and
evaluation calls. The same process also serves ``/v1/*`` backed by the
deterministic stub providers, which gives the remote-provider client a
loopback target for wire-protocol tests.

Every error leaves as a non-200 JSON envelope
``{"error": str, "request_id": str, "kind": str}`` where ``kind`` is one
of ``usage``, ``validation``, ``provider``, ``internal``.
"""
from __future__ import annotations

import logging
import math
import uuid
from dataclasses import dataclass, field

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from .. import __version__
from ..classgen import Query, generate_ultra_classes, ultra_class_from_record, ultra_class_to_record
from ..corpus import Corpus, corpus_from_records, corpus_stats
from ..embeddings import EmbeddingStore, build_store
from ..errors import DataValidationError, EsekitError, ProviderError, UsageError
from ..generation import EntityTrie, build_trie, cot_augment, run_genexpan
from ..metrics import evaluate, flatten_queries
from ..providers.base import ProviderBundle, TokenizerSpec
from ..providers.remote import ProviderEndpoint, RemoteProvider
from ..providers.stubs import EmbeddingSimilarityRanker, HashingEmbedder, NgramLM, stub_bundle
from ..retrieval import (
    expand,
    mine_contrastive_pairs,
    pair_records,
    ranked_list_record,
    run_retexpan,
    select_similar_lists,
)
from . import models

log = logging.getLogger(__name__)

FRAMEWORKS = ("ret", "gen")


@dataclass
class AppState:
    seed: int
    dim: int
    tokenizer_kind: str
    corpora: dict[str, Corpus] = field(default_factory=dict)
    stores: dict[str, EmbeddingStore] = field(default_factory=dict)
    tries: dict[tuple[str, str], EntityTrie] = field(default_factory=dict)
    lms: dict[tuple[str, str], NgramLM] = field(default_factory=dict)
    bundle: ProviderBundle = None

    def corpus(self, name: str) -> Corpus:
        if name not in self.corpora:
            raise UsageError(f"no corpus loaded under name {name!r}")
        return self.corpora[name]

    def store(self, name: str) -> EmbeddingStore:
        if name not in self.stores:
            raise UsageError(f"no embedding store under name {name!r}")
        return self.stores[name]

    def corpus_texts(self, name: str) -> list[str]:
        corpus = self.corpus(name)
        texts = [s.text for s in corpus.sentences.values()]
        texts += [corpus.name_of(eid) for eid in sorted(corpus.candidate_vocab)]
        return texts

    def lm_for(self, corpus_name: str, kind: str) -> NgramLM:
        key = (corpus_name, kind)
        if key not in self.lms:
            self.lms[key] = NgramLM(TokenizerSpec(kind=kind), texts=self.corpus_texts(corpus_name))
        return self.lms[key]

    def trie_for(self, corpus_name: str, kind: str) -> EntityTrie:
        key = (corpus_name, kind)
        if key not in self.tries:
            corpus = self.corpus(corpus_name)
            vocab = {eid: corpus.name_of(eid) for eid in corpus.candidate_vocab}
            self.tries[key] = build_trie(vocab, TokenizerSpec(kind=kind).tokenize)
        return self.tries[key]


def _request_id(request: Request) -> str:
    return request.headers.get("X-Request-Id") or uuid.uuid4().hex


def _envelope(request: Request, status: int, message: str, kind: str) -> JSONResponse:
    return JSONResponse(
        status_code=status,
        content={"error": message, "request_id": _request_id(request), "kind": kind},
    )


def _query_seed(seed: int, query_index: int) -> int:
    return (seed * 1_000_003 + query_index) % (2**63)


def _remote_provider(config: dict) -> RemoteProvider | None:
    """Build a remote provider from ``{"kind": "remote", "endpoint": {...}}``,
    or return None for the stub kind."""
    kind = config.get("kind", "stub")
    if kind == "stub":
        return None
    if kind != "remote":
        raise UsageError(f"unknown provider kind {kind!r}; pick 'stub' or 'remote'")
    endpoint = config.get("endpoint")
    if not isinstance(endpoint, dict) or "base_url" not in endpoint:
        raise UsageError("remote provider config needs an 'endpoint' with a 'base_url'")
    return RemoteProvider(ProviderEndpoint(**endpoint))


def create_app(seed: int = 0, dim: int = 64, tokenizer_kind: str = "whitespace") -> FastAPI:
    app = FastAPI(title="esekit", version=__version__)
    state = AppState(seed=seed, dim=dim, tokenizer_kind=tokenizer_kind)
    state.bundle = stub_bundle(TokenizerSpec(kind=tokenizer_kind), seed=seed, dim=dim)
    app.state.engine = state

    @app.exception_handler(UsageError)
    async def usage_error(request: Request, exc: UsageError):
        return _envelope(request, 400, str(exc), "usage")

    @app.exception_handler(DataValidationError)
    async def validation_error(request: Request, exc: DataValidationError):
        return _envelope(request, 422, exc.report(), "validation")

    @app.exception_handler(ProviderError)
    async def provider_error(request: Request, exc: ProviderError):
        return _envelope(request, 502, str(exc), "provider")

    @app.exception_handler(EsekitError)
    async def other_engine_error(request: Request, exc: EsekitError):
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

    # --- engine ----------------------------------------------------------------

    @app.get("/health", response_model=models.HealthOut)
    async def health():
        return {"status": "ok", "version": __version__}

    @app.post("/corpora", response_model=models.CorpusOut)
    async def load_corpus_endpoint(body: models.CorpusIn):
        corpus = corpus_from_records(body.entities, body.sentences, body.fine_classes)
        state.corpora[body.name] = corpus
        state.tries = {k: v for k, v in state.tries.items() if k[0] != body.name}
        state.lms = {k: v for k, v in state.lms.items() if k[0] != body.name}
        return {"name": body.name, "stats": vars(corpus_stats(corpus))}

    @app.post("/classes/generate", response_model=models.GenClassesOut)
    async def gen_classes(body: models.GenClassesIn):
        corpus = state.corpus(body.corpus)
        names = [body.fine_class] if body.fine_class else sorted(corpus.fine_classes)
        classes = []
        for name in names:
            classes.extend(
                generate_ultra_classes(
                    corpus,
                    name,
                    m=body.pos_attr_count,
                    n=body.neg_attr_count,
                    n_thred=body.n_thred,
                    seed=body.seed,
                )
            )
        return {"classes": [ultra_class_to_record(uc) for uc in classes]}

    @app.post("/stores/build", response_model=models.StoreOut)
    async def build_store_endpoint(body: models.BuildStoreIn):
        corpus = state.corpus(body.corpus)
        embedder = _remote_provider(body.provider) or HashingEmbedder(
            dim=body.dim if body.dim is not None else state.dim,
            seed=body.seed if body.seed is not None else state.seed,
            **body.embedder,
        )
        store = build_store(corpus, embedder, cap=body.cap, jobs=body.jobs)
        state.stores[body.name] = store
        return {"name": body.name, "dim": store.dim, "count": len(store)}

    @app.post("/stores/load", response_model=models.StoreOut)
    async def load_store_endpoint(body: models.LoadStoreIn):
        store = EmbeddingStore.from_records(body.dim, body.records)
        state.stores[body.name] = store
        return {"name": body.name, "dim": store.dim, "count": len(store)}

    @app.get("/stores/{name}", response_model=models.StoreDumpOut)
    async def dump_store_endpoint(name: str):
        store = state.store(name)
        return {"name": name, "dim": store.dim, "records": store.records()}

    def _resolve_queries(body: models.ExpandIn) -> list[Query]:
        if body.dataset is not None:
            dataset = [ultra_class_from_record(rec) for rec in body.dataset]
            return [q for _, q in flatten_queries(dataset)]
        if body.queries:
            return [Query(pos_seeds=tuple(q.pos_seeds), neg_seeds=tuple(q.neg_seeds)) for q in body.queries]
        raise UsageError("request needs either 'dataset' or 'queries'")

    @app.post("/expand", response_model=models.ExpandOut)
    async def expand_endpoint(body: models.ExpandIn):
        if body.framework not in FRAMEWORKS:
            raise UsageError(f"unknown framework {body.framework!r}; pick one of {FRAMEWORKS}")
        corpus = state.corpus(body.corpus)
        queries = _resolve_queries(body)
        results: list[dict] = []
        cot_records: list[dict] = []
        if body.framework == "ret":
            if not body.store:
                raise UsageError("retrieval expansion needs a 'store'")
            store = state.store(body.store)
            for qi, query in enumerate(queries):
                ranked = run_retexpan(
                    store, corpus, query, body.k,
                    segment_length=body.segment_length, rerank=body.rerank,
                )
                results.append(ranked_list_record(qi, "ret", ranked))
        else:
            lm = _remote_provider(body.provider) or state.lm_for(body.corpus, body.tokenizer)
            trie = state.trie_for(body.corpus, body.tokenizer)
            rounds = body.rounds if body.rounds is not None else max(1, math.ceil(body.k / body.select_count))
            for qi, query in enumerate(queries):
                cot_prefix = ""
                if body.cot_mode:
                    record = cot_augment(
                        lm,
                        [corpus.name_of(e) for e in query.pos_seeds],
                        [corpus.name_of(e) for e in query.neg_seeds],
                        body.cot_mode,
                    )
                    cot_prefix = record.context.prompt_prefix()
                    cot_records.append({"query_index": qi, **record.to_json()})
                ranked = run_genexpan(
                    corpus, query, lm, trie,
                    rounds=rounds, k=body.k, segment_length=body.segment_length,
                    per_round_generate=body.per_round_generate,
                    select_count=body.select_count,
                    beam_width=body.beam_width,
                    seed=_query_seed(body.seed, qi),
                    cot_prefix=cot_prefix,
                    rerank=body.rerank,
                )
                if not ranked.entries:
                    log.warning("query %d produced an empty expansion", qi)
                results.append(ranked_list_record(qi, "gen", ranked))
        return {"results": results, "cot": cot_records}

    @app.post("/pairs/mine", response_model=models.MinePairsOut)
    async def mine_pairs_endpoint(body: models.MinePairsIn):
        corpus = state.corpus(body.corpus)
        store = state.store(body.store)
        members = corpus.fine_class_members(body.fine_class)
        query = Query(pos_seeds=tuple(body.query.pos_seeds), neg_seeds=tuple(body.query.neg_seeds))
        ranked = expand(store, corpus, query, body.k)
        name_to_id: dict[str, str] = {}
        for eid in sorted(corpus.candidate_vocab):
            name_to_id.setdefault(corpus.name_of(eid), eid)
        ranker = _remote_provider(body.provider) or EmbeddingSimilarityRanker(store, name_to_id)
        pos_ids, neg_ids = select_similar_lists(ranked, query, body.t, ranker, corpus)
        in_list = set(ranked.ids()) | query.all_seeds
        pool = [
            eid for eid in sorted(corpus.candidate_vocab)
            if eid not in members and eid not in in_list
        ][: body.pool_size]
        pairs = mine_contrastive_pairs(
            ranked, pos_ids, neg_ids, pool, corpus, query,
            samples_per_entity=body.samples_per_entity,
        )
        records = pair_records(pairs)
        return {
            "positives": [r for r in records if r["polarity"] == "positive"],
            "negatives": [r for r in records if r["polarity"] == "negative"],
        }

    @app.post("/eval", response_model=models.EvalOut)
    async def eval_endpoint(body: models.EvalIn):
        dataset = [ultra_class_from_record(rec) for rec in body.dataset]
        report = evaluate(body.results, dataset, ks=body.ks, normalizer=body.normalizer)
        return {"report": report.to_json(), "table": report.render_table()}

    # --- provider wire protocol -------------------------------------------------

    @app.post("/v1/bind", response_model=models.CorpusOut)
    async def bind_providers(body: models.BindIn):
        corpus = state.corpus(body.corpus)
        state.bundle = stub_bundle(
            TokenizerSpec(kind=state.tokenizer_kind),
            seed=state.seed,
            dim=state.dim,
            corpus_texts=state.corpus_texts(body.corpus),
        )
        return {"name": body.corpus, "stats": vars(corpus_stats(corpus))}

    @app.post("/v1/embed", response_model=models.EmbedOut)
    async def v1_embed(body: models.EmbedIn):
        vectors = state.bundle.embedder.embed(body.texts)
        return {"vectors": [v.tolist() for v in vectors]}

    @app.post("/v1/next_token_logprobs", response_model=models.LogprobsOut)
    async def v1_logprobs(body: models.LogprobsIn):
        return {"logprobs": state.bundle.lm.next_token_logprobs(body.prefix_tokens, body.allowed)}

    @app.post("/v1/score_continuation", response_model=models.ScoreContinuationOut)
    async def v1_score(body: models.ScoreContinuationIn):
        logprob, token_count = state.bundle.lm.score_continuation(body.prefix, body.continuation)
        return {"logprob": logprob, "token_count": token_count}

    @app.post("/v1/complete", response_model=models.CompleteOut)
    async def v1_complete(body: models.CompleteIn):
        return {"text": state.bundle.lm.complete(body.prompt, max_tokens=body.max_tokens)}

    @app.post("/v1/rank_similar", response_model=models.RankSimilarOut)
    async def v1_rank(body: models.RankSimilarIn):
        return {"entities": state.bundle.ranker.rank_similar(body.candidates, body.seeds, body.top)}

    return app
