"""Entity representations from masked-context sentence embeddings.

Each mention of an entity is replaced by the provider's mask token and
the provider returns the vector at the mask position; the entity vector
is the arithmetic mean over all its mention samples. Vectors are stored
unnormalized; similarity and the contrastive loss are scale-free
(cosine), and unit projection is applied explicitly where required.

Also home to the two verifiable training objectives: the smoothed
masked-entity cross entropy and the InfoNCE contrastive loss (with an
analytic anchor gradient so it can be checked against finite
differences).
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import Corpus, DEFAULT_SENTENCE_CAP, sentences_for
from .errors import DataValidationError, UsageError

PROB_FLOOR = 1e-12  # keeps log(p) and log(1-p) finite


class EmbeddingError(UsageError):
    """Vector shape or value problem."""


def _as_vector(v) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise EmbeddingError(f"expected a 1-d vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise EmbeddingError("vector has non-finite entries")
    return arr


@dataclass
class EmbeddingStore:
    """Per-entity vectors plus how many samples went into each mean."""

    dim: int
    vectors: dict[str, np.ndarray] = field(default_factory=dict)
    provenance: dict[str, int] = field(default_factory=dict)

    def add(self, entity_id: str, vector: np.ndarray, count_averaged: int) -> None:
        vec = _as_vector(vector)
        if vec.shape[0] != self.dim:
            raise EmbeddingError(f"vector for {entity_id!r} has dim {vec.shape[0]}, store dim is {self.dim}")
        if count_averaged < 1:
            raise EmbeddingError("provenance count must be >= 1")
        self.vectors[entity_id] = vec
        self.provenance[entity_id] = count_averaged

    def vector(self, entity_id: str) -> np.ndarray:
        try:
            return self.vectors[entity_id]
        except KeyError:
            raise EmbeddingError(f"no embedding stored for entity {entity_id!r}") from None

    def __contains__(self, entity_id: str) -> bool:
        return entity_id in self.vectors

    def __len__(self) -> int:
        return len(self.vectors)

    def records(self) -> list[dict]:
        """Entity records in canonical (id-sorted) order, the wire and
        on-disk shape."""
        return [
            {
                "id": eid,
                "count_averaged": self.provenance[eid],
                "values": self.vectors[eid].tolist(),
            }
            for eid in sorted(self.vectors)
        ]

    @classmethod
    def from_records(cls, dim: int, records: Iterable[Mapping]) -> "EmbeddingStore":
        store = cls(dim=dim)
        for rec in records:
            try:
                store.add(rec["id"], np.asarray(rec["values"], dtype=np.float64), int(rec["count_averaged"]))
            except (KeyError, TypeError, ValueError) as exc:
                raise DataValidationError(f"bad embedding record: {exc}") from None
        return store

    # On-disk encoding (byte-stable for identical inputs): UTF-8 JSON
    # lines; line 1 is the header {"dim", "count"}, then one record
    # {"id", "count_averaged", "values"} per entity, sorted by id.
    # Floats are serialized with Python's shortest round-trip repr.
    def save(self, path: Path | str, extra_header: Mapping | None = None) -> None:
        header = {"dim": self.dim, "count": len(self.vectors)}
        if extra_header:
            header.update(extra_header)
        with Path(path).open("w", encoding="utf-8") as fh:
            fh.write(json.dumps(header, sort_keys=True) + "\n")
            for rec in self.records():
                fh.write(json.dumps(rec, ensure_ascii=False) + "\n")

    @classmethod
    def load(cls, path: Path | str) -> "EmbeddingStore":
        with Path(path).open("r", encoding="utf-8") as fh:
            try:
                header = json.loads(fh.readline())
                store = cls(dim=int(header["dim"]))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise DataValidationError(f"bad embedding cache header: {exc}") from None
            for lineno, line in enumerate(fh, start=2):
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                try:
                    store.add(rec["id"], np.asarray(rec["values"], dtype=np.float64), int(rec["count_averaged"]))
                except (KeyError, EmbeddingError) as exc:
                    raise DataValidationError(f"bad embedding record: {exc}", [f"{path}:{lineno}"]) from None
        if len(store) != header["count"]:
            raise DataValidationError(
                f"embedding cache header declares {header['count']} records, found {len(store)}"
            )
        return store


def masked_texts_for_entity(
    corpus: Corpus, entity_id: str, mask_token: str, cap: int = DEFAULT_SENTENCE_CAP
) -> list[str]:
    """One masked input per mention across the capped sentence selection."""
    texts = []
    for sent in sentences_for(corpus, entity_id, cap):
        for m in sorted(sent.mentions_of(entity_id), key=lambda m: m.start):
            texts.append(sent.text[: m.start] + mask_token + sent.text[m.end:])
    return texts


def embed_entity_sentences(
    corpus: Corpus,
    entity_id: str,
    provider,
    cap: int = DEFAULT_SENTENCE_CAP,
    name_fallback: bool = True,
) -> tuple[np.ndarray, int]:
    """Mean masked-context vector for one entity.

    Returns ``(vector, samples_averaged)``. Entities with no sentences
    fall back to embedding the bare name when ``name_fallback`` is set;
    otherwise this is an error.
    """
    texts = masked_texts_for_entity(corpus, entity_id, provider.mask_token, cap)
    if not texts:
        if not name_fallback:
            raise EmbeddingError(f"entity {entity_id!r} has no sentences and name fallback is disabled")
        texts = [corpus.name_of(entity_id)]
    vectors = [_as_vector(v) for v in provider.embed(texts)]
    if len(vectors) != len(texts):
        raise EmbeddingError(f"provider returned {len(vectors)} vectors for {len(texts)} texts")
    return np.mean(np.stack(vectors), axis=0), len(texts)


def build_store(
    corpus: Corpus,
    provider,
    cap: int = DEFAULT_SENTENCE_CAP,
    entity_ids: Iterable[str] | None = None,
    jobs: int = 1,
) -> EmbeddingStore:
    """Embed every candidate entity (or the ids given) into a new store."""
    ids = sorted(entity_ids) if entity_ids is not None else sorted(corpus.candidate_vocab)
    if not ids:
        raise UsageError("nothing to embed")

    def one(eid: str):
        return eid, embed_entity_sentences(corpus, eid, provider, cap=cap)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, ids))
    else:
        results = [one(eid) for eid in ids]

    dim = results[0][1][0].shape[0]
    store = EmbeddingStore(dim=dim)
    for eid, (vec, count) in results:
        store.add(eid, vec, count)
    return store


def cosine_similarity(a, b) -> float:
    a, b = _as_vector(a), _as_vector(b)
    if a.shape != b.shape:
        raise EmbeddingError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise EmbeddingError("cosine similarity undefined for a zero vector")
    return float(np.dot(a, b) / (na * nb))


def project_unit(v) -> np.ndarray:
    v = _as_vector(v)
    norm = np.linalg.norm(v)
    if norm == 0.0:
        raise EmbeddingError("cannot project the zero vector onto the unit sphere")
    return v / norm


def masked_entity_loss(preds, targets, eta: float = 0.1) -> float:
    """Smoothed cross entropy over the candidate-entity distribution.

    ``preds`` is a batch of probability rows over the entity vocabulary,
    ``targets`` the true entity index per row. With the one-hot row y and
    smoothing factor eta in [0, 1), the batch loss is

        -(1/N) * sum_i sum_j [ y_i[j]*(1-eta)*log(p_i[j])
                               + (1-y_i[j])*eta*log(1-p_i[j]) ]

    Note the second term sums over the *non-target* entries, so this is
    not the canonical smoothed multiclass cross entropy; it is kept in
    this exact form because it is the verifiable training objective.
    Probabilities are clamped away from {0, 1} before the logs.
    """
    preds = np.atleast_2d(np.asarray(preds, dtype=np.float64))
    targets = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    if not (0.0 <= eta < 1.0):
        raise UsageError(f"eta must be in [0, 1), got {eta}")
    if preds.ndim != 2 or preds.shape[0] != targets.shape[0]:
        raise UsageError(f"batch shape mismatch: preds {preds.shape}, targets {targets.shape}")
    if np.any(preds < 0.0) or np.any(preds > 1.0):
        raise UsageError("predictions must be probabilities in [0, 1]")
    row_sums = preds.sum(axis=1)
    if np.any(np.abs(row_sums - 1.0) > 1e-6):
        raise UsageError("each prediction row must sum to 1 within 1e-6")
    if np.any(targets < 0) or np.any(targets >= preds.shape[1]):
        raise UsageError("target index out of range")

    p = np.clip(preds, PROB_FLOOR, 1.0 - PROB_FLOOR)
    n, v = p.shape
    y = np.zeros_like(p)
    y[np.arange(n), targets] = 1.0
    total = y * (1.0 - eta) * np.log(p) + (1.0 - y) * eta * np.log(1.0 - p)
    return float(-total.sum() / n)


def infonce_loss(anchor, positive, negatives: Sequence, tau: float = 0.1) -> float:
    """Contrastive loss: softmax over cosine similarities scaled by tau,
    with the positive pair in the numerator."""
    if tau <= 0.0:
        raise UsageError(f"temperature must be positive, got {tau}")
    negatives = list(negatives)
    if not negatives:
        raise UsageError("InfoNCE needs at least one negative")
    sims = [cosine_similarity(anchor, positive)] + [cosine_similarity(anchor, v) for v in negatives]
    scaled = np.asarray(sims, dtype=np.float64) / tau
    # -log softmax[0], computed stably
    m = scaled.max()
    return float(-(scaled[0] - (m + math.log(np.exp(scaled - m).sum()))))


def infonce_anchor_gradient(anchor, positive, negatives: Sequence, tau: float = 0.1) -> np.ndarray:
    """Analytic d(loss)/d(anchor) for :func:`infonce_loss`."""
    if tau <= 0.0:
        raise UsageError(f"temperature must be positive, got {tau}")
    a = _as_vector(anchor)
    others = [_as_vector(positive)] + [_as_vector(v) for v in list(negatives)]
    if not others[1:]:
        raise UsageError("InfoNCE needs at least one negative")
    sims = np.array([cosine_similarity(a, v) for v in others])
    scaled = sims / tau
    weights = np.exp(scaled - scaled.max())
    weights /= weights.sum()
    na = np.linalg.norm(a)
    grad = np.zeros_like(a)
    for k, (v, sim) in enumerate(zip(others, sims)):
        coeff = (weights[k] - (1.0 if k == 0 else 0.0)) / tau
        dcos = v / (na * np.linalg.norm(v)) - sim * a / (na * na)
        grad += coeff * dcos
    return grad
