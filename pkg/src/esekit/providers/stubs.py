"""Deterministic in-process providers.

These stand in for the neural models at desk scale: every output is a
pure function of the inputs and a seed, so pipeline runs are exactly
reproducible and oracle tests can enumerate expected values.
"""
from __future__ import annotations

import hashlib
import logging
import math
from collections import Counter
from typing import Iterable, Mapping, Sequence

import numpy as np

from ..embeddings import EmbeddingStore, cosine_similarity
from ..errors import ProviderError, UsageError
from .base import DEFAULT_MASK_TOKEN, TokenizerSpec

log = logging.getLogger(__name__)

_TABLE_FLOOR = 1e-12  # keeps renormalized logprobs finite off-table


def _stable_int(*parts: str) -> int:
    digest = hashlib.blake2b("|".join(parts).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


class HashingEmbedder:
    """Embeds text by hashing character n-grams into random directions.

    Two texts share vector mass exactly where they share n-grams, so
    lexical overlap becomes cosine similarity. Whitespace tokens starting
    with ``marker_prefix`` are treated as planted attribute markers and
    add a strong component confined to one coordinate block, which makes
    synthetic class structure recoverable by design.
    """

    def __init__(
        self,
        dim: int = 64,
        seed: int = 0,
        mask_token: str = DEFAULT_MASK_TOKEN,
        ngram: int = 3,
        marker_prefix: str = "attr",
        marker_weight: float = 4.0,
        marker_blocks: int = 8,
    ):
        if dim < marker_blocks:
            raise UsageError(f"dim {dim} smaller than marker block count {marker_blocks}")
        if ngram < 1:
            raise UsageError(f"n-gram size must be >= 1, got {ngram}")
        self.dim = dim
        self.seed = seed
        self.mask_token = mask_token
        self.ngram = ngram
        self.marker_prefix = marker_prefix
        self.marker_weight = marker_weight
        self.marker_blocks = marker_blocks
        self._features: dict[str, np.ndarray] = {}

    def _feature(self, key: str) -> np.ndarray:
        vec = self._features.get(key)
        if vec is None:
            rng = np.random.default_rng(_stable_int(str(self.seed), key))
            vec = rng.standard_normal(self.dim)
            self._features[key] = vec
        return vec

    def _marker(self, token: str) -> np.ndarray:
        key = f"marker|{token}"
        vec = self._features.get(key)
        if vec is None:
            block_size = self.dim // self.marker_blocks
            block = _stable_int(str(self.seed), "block", token) % self.marker_blocks
            rng = np.random.default_rng(_stable_int(str(self.seed), key))
            local = rng.standard_normal(block_size)
            local *= self.marker_weight * math.sqrt(self.dim) / np.linalg.norm(local)
            vec = np.zeros(self.dim)
            vec[block * block_size : (block + 1) * block_size] = local
            self._features[key] = vec
        return vec

    def _text_vector(self, text: str) -> np.ndarray:
        out = np.zeros(self.dim)
        lowered = text.lower()
        n = self.ngram
        if len(lowered) < n:
            lowered = lowered.ljust(n)
        for i in range(len(lowered) - n + 1):
            out += self._feature(f"ng|{lowered[i : i + n]}")
        for token in text.split():
            if token.startswith(self.marker_prefix):
                out += self._marker(token)
        return out

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        return [self._text_vector(t) for t in texts]


class TableLM:
    """Language model defined by explicit probability tables.

    ``tables`` maps a context (token tuple) to a token distribution; the
    longest table key matching a suffix of the live prefix wins, with the
    empty tuple as the unconditional fallback. Contexts absent from every
    table behave uniformly. ``replies`` short-circuits ``complete`` by
    prompt substring, for canned reasoning transcripts.
    """

    def __init__(
        self,
        tokenizer: TokenizerSpec,
        tables: Mapping[Sequence[str] | str, Mapping[str, float]] | None = None,
        replies: Mapping[str, str] | None = None,
        unknown_prob: float = 1e-6,
    ):
        self.tokenizer = tokenizer
        self.tables: dict[tuple[str, ...], dict[str, float]] = {}
        for key, dist in (tables or {}).items():
            tkey = (key,) if isinstance(key, str) else tuple(key)
            if any(p < 0 for p in dist.values()):
                raise UsageError(f"negative probability in table for context {tkey!r}")
            self.tables[tkey] = dict(dist)
        self.replies = dict(replies or {})
        self.unknown_prob = unknown_prob

    def _dist(self, prefix_tokens: Sequence[str]) -> dict[str, float] | None:
        tokens = tuple(prefix_tokens)
        for length in range(len(tokens), -1, -1):
            key = tokens[len(tokens) - length :]
            if key in self.tables:
                return self.tables[key]
        return None

    def next_token_logprobs(self, prefix_tokens: Sequence[str], allowed: Sequence[str]) -> dict[str, float]:
        if not allowed:
            return {}
        dist = self._dist(prefix_tokens)
        if dist is None or all(dist.get(t, 0.0) <= 0.0 for t in allowed):
            logp = -math.log(len(allowed))
            return {t: logp for t in allowed}
        weights = {t: max(dist.get(t, 0.0), _TABLE_FLOOR) for t in allowed}
        total = sum(weights.values())
        return {t: math.log(w / total) for t, w in weights.items()}

    def score_continuation(self, prefix: str, continuation: str) -> tuple[float, int]:
        tokens = self.tokenizer.tokenize(continuation)
        current = list(self.tokenizer.tokenize(prefix))
        logprob = 0.0
        for tok in tokens:
            dist = self._dist(current)
            p = dist.get(tok, self.unknown_prob) if dist else self.unknown_prob
            logprob += math.log(max(p, _TABLE_FLOOR))
            current.append(tok)
        return logprob, len(tokens)

    def complete(self, prompt: str, max_tokens: int) -> str:
        for key in sorted(self.replies):
            if key in prompt:
                return self.replies[key]
        current = list(self.tokenizer.tokenize(prompt))
        out: list[str] = []
        for _ in range(max_tokens):
            dist = self._dist(current)
            if not dist:
                break
            token = min(dist, key=lambda t: (-dist[t], t))
            out.append(token)
            current.append(token)
        return self.tokenizer.detokenize(out)


class NgramLM:
    """N-gram counts over corpus text with additive smoothing.

    Contexts back off to shorter suffixes when unseen; an untrained model
    degrades to the uniform distribution.
    """

    def __init__(
        self,
        tokenizer: TokenizerSpec,
        texts: Iterable[str] = (),
        order: int = 2,
        alpha: float = 1.0,
    ):
        if order < 1:
            raise UsageError(f"order must be >= 1, got {order}")
        if alpha <= 0:
            raise UsageError(f"smoothing alpha must be > 0, got {alpha}")
        self.tokenizer = tokenizer
        self.order = order
        self.alpha = alpha
        self._tables: list[dict[tuple[str, ...], Counter]] = [{} for _ in range(order)]
        self.vocabulary: set[str] = set()
        for text in texts:
            self._train_one(text)

    def _train_one(self, text: str) -> None:
        tokens = self.tokenizer.tokenize(text)
        self.vocabulary.update(tokens)
        for i, tok in enumerate(tokens):
            for length in range(min(i, self.order - 1) + 1):
                ctx = tuple(tokens[i - length : i])
                self._tables[length].setdefault(ctx, Counter())[tok] += 1

    def count(self, context: Sequence[str], token: str) -> int:
        ctx = tuple(context)
        if len(ctx) >= self.order:
            raise UsageError(f"context longer than order-1 ({self.order - 1})")
        return self._tables[len(ctx)].get(ctx, Counter()).get(token, 0)

    def _context_counter(self, prefix_tokens: Sequence[str]) -> Counter:
        tokens = tuple(prefix_tokens)
        for length in range(min(len(tokens), self.order - 1), -1, -1):
            ctx = tokens[len(tokens) - length :]
            counter = self._tables[length].get(ctx)
            if counter:
                return counter
        return Counter()

    def next_token_logprobs(self, prefix_tokens: Sequence[str], allowed: Sequence[str]) -> dict[str, float]:
        if not allowed:
            return {}
        counter = self._context_counter(prefix_tokens)
        weights = {t: counter.get(t, 0) + self.alpha for t in allowed}
        total = sum(weights.values())
        return {t: math.log(w / total) for t, w in weights.items()}

    def score_continuation(self, prefix: str, continuation: str) -> tuple[float, int]:
        tokens = self.tokenizer.tokenize(continuation)
        current = list(self.tokenizer.tokenize(prefix))
        vocab_size = max(len(self.vocabulary), 1)
        logprob = 0.0
        for tok in tokens:
            counter = self._context_counter(current)
            p = (counter.get(tok, 0) + self.alpha) / (sum(counter.values()) + self.alpha * vocab_size)
            logprob += math.log(p)
            current.append(tok)
        return logprob, len(tokens)

    def complete(self, prompt: str, max_tokens: int) -> str:
        current = list(self.tokenizer.tokenize(prompt))
        out: list[str] = []
        for _ in range(max_tokens):
            counter = self._context_counter(current)
            if not counter:
                break
            token = min(counter, key=lambda t: (-counter[t], t))
            out.append(token)
            current.append(token)
        return self.tokenizer.detokenize(out)


class EmbeddingSimilarityRanker:
    """Ranks candidate names by mean cosine to seed names over a built
    embedding store; the fallback when no external ranker is configured."""

    def __init__(self, store: EmbeddingStore, name_to_id: Mapping[str, str]):
        self.store = store
        self.name_to_id = dict(name_to_id)

    def rank_similar(self, candidates: Sequence[str], seeds: Sequence[str], top: int) -> list[str]:
        if top < 1:
            raise UsageError(f"top must be >= 1, got {top}")
        seed_vecs = []
        for seed in seeds:
            eid = self.name_to_id.get(seed)
            if eid is None or eid not in self.store:
                raise UsageError(f"seed name {seed!r} has no embedding")
            seed_vecs.append(self.store.vector(eid))
        if not seed_vecs:
            raise UsageError("no seeds to rank against")
        scored = []
        for name in dict.fromkeys(candidates):
            eid = self.name_to_id.get(name)
            if eid is None or eid not in self.store:
                log.debug("candidate %r has no embedding; skipped", name)
                continue
            vec = self.store.vector(eid)
            score = sum(cosine_similarity(vec, sv) for sv in seed_vecs) / len(seed_vecs)
            scored.append((name, eid, score))
        scored.sort(key=lambda item: (-item[2], item[1]))
        return [name for name, _, _ in scored[:top]]


class NameEmbeddingRanker:
    """Ranks by embedding the raw names themselves; needs no store, so it
    can serve the wire protocol before any corpus is loaded."""

    def __init__(self, embedder: HashingEmbedder):
        self.embedder = embedder

    def rank_similar(self, candidates: Sequence[str], seeds: Sequence[str], top: int) -> list[str]:
        if top < 1:
            raise UsageError(f"top must be >= 1, got {top}")
        if not seeds:
            raise UsageError("no seeds to rank against")
        names = list(dict.fromkeys(candidates))
        if not names:
            return []
        vecs = self.embedder.embed(list(names) + list(seeds))
        cand_vecs, seed_vecs = vecs[: len(names)], vecs[len(names) :]
        scored = [
            (name, sum(cosine_similarity(cv, sv) for sv in seed_vecs) / len(seed_vecs))
            for name, cv in zip(names, cand_vecs)
        ]
        scored.sort(key=lambda item: (-item[1], item[0]))
        return [name for name, _ in scored[:top]]


class CannedRanker:
    """Returns pre-recorded rankings keyed by the seed set."""

    def __init__(self, responses: Mapping[Iterable[str], Sequence[str]]):
        self.responses = {frozenset(k): list(v) for k, v in responses.items()}

    def rank_similar(self, candidates: Sequence[str], seeds: Sequence[str], top: int) -> list[str]:
        key = frozenset(seeds)
        if key not in self.responses:
            raise ProviderError(f"no canned response for seeds {sorted(key)}")
        return self.responses[key][:top]


def stub_bundle(
    tokenizer: TokenizerSpec | None = None,
    seed: int = 0,
    dim: int = 64,
    corpus_texts: Iterable[str] = (),
    ngram_order: int = 2,
    **embedder_kwargs,
):
    """Assemble the deterministic default providers."""
    from .base import ProviderBundle

    tokenizer = tokenizer or TokenizerSpec()
    embedder = HashingEmbedder(dim=dim, seed=seed, mask_token=tokenizer.mask_token, **embedder_kwargs)
    lm = NgramLM(tokenizer, texts=corpus_texts, order=ngram_order)
    return ProviderBundle(
        embedder=embedder,
        lm=lm,
        ranker=NameEmbeddingRanker(embedder),
        tokenizer=tokenizer,
    )
