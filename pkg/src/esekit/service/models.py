"""Request and response bodies for the engine and provider endpoints.

Corpus, class, pair, and ranked-list payloads travel as plain record
dicts in the documented JSONL shapes; deep validation happens in the
engine so error reports carry domain detail instead of schema paths.
"""
from __future__ import annotations

from pydantic import BaseModel, Field


class HealthOut(BaseModel):
    status: str
    version: str


class CorpusIn(BaseModel):
    name: str
    entities: list[dict]
    sentences: list[dict]
    fine_classes: list[dict]


class CorpusOut(BaseModel):
    name: str
    stats: dict


class GenClassesIn(BaseModel):
    corpus: str
    fine_class: str | None = None
    pos_attr_count: int = 1
    neg_attr_count: int = 1
    n_thred: int = 6
    seed: int = 0


class GenClassesOut(BaseModel):
    classes: list[dict]


class BuildStoreIn(BaseModel):
    corpus: str
    name: str
    cap: int = 64
    dim: int | None = None
    seed: int | None = None
    jobs: int = 1
    embedder: dict = Field(default_factory=dict)
    provider: dict = Field(default_factory=lambda: {"kind": "stub"})


class StoreOut(BaseModel):
    name: str
    dim: int
    count: int


class LoadStoreIn(BaseModel):
    name: str
    dim: int
    records: list[dict]


class StoreDumpOut(BaseModel):
    name: str
    dim: int
    records: list[dict]


class QueryIn(BaseModel):
    pos_seeds: list[str]
    neg_seeds: list[str]


class ExpandIn(BaseModel):
    corpus: str
    framework: str = "ret"
    store: str | None = None
    dataset: list[dict] | None = None
    queries: list[QueryIn] | None = None
    k: int = 100
    segment_length: int = 10
    rerank: bool = True
    rounds: int | None = None
    per_round_generate: int = 20
    select_count: int = 5
    beam_width: int | None = None
    seed: int = 0
    cot_mode: str | None = None
    tokenizer: str = "whitespace"
    provider: dict = Field(default_factory=lambda: {"kind": "stub"})


class ExpandOut(BaseModel):
    results: list[dict]
    cot: list[dict]


class MinePairsIn(BaseModel):
    corpus: str
    store: str
    fine_class: str
    query: QueryIn
    k: int = 100
    t: int = 10
    pool_size: int = 10
    samples_per_entity: int = 2
    provider: dict = Field(default_factory=lambda: {"kind": "stub"})


class MinePairsOut(BaseModel):
    positives: list[dict]
    negatives: list[dict]


class EvalIn(BaseModel):
    results: list[dict]
    dataset: list[dict]
    ks: list[int] = Field(default_factory=lambda: [10, 20, 50, 100])
    normalizer: str = "min_k_g"


class EvalOut(BaseModel):
    report: dict
    table: str


# --- provider wire protocol ---------------------------------------------------

class EmbedIn(BaseModel):
    texts: list[str]


class EmbedOut(BaseModel):
    vectors: list[list[float]]


class LogprobsIn(BaseModel):
    prefix_tokens: list[str]
    allowed: list[str]


class LogprobsOut(BaseModel):
    logprobs: dict[str, float]


class ScoreContinuationIn(BaseModel):
    prefix: str
    continuation: str


class ScoreContinuationOut(BaseModel):
    logprob: float
    token_count: int


class CompleteIn(BaseModel):
    prompt: str
    max_tokens: int = 64


class CompleteOut(BaseModel):
    text: str


class RankSimilarIn(BaseModel):
    candidates: list[str]
    seeds: list[str]
    top: int


class RankSimilarOut(BaseModel):
    entities: list[str]


class BindIn(BaseModel):
    corpus: str
