"""Retrieval-based expansion.

Candidates are ranked by mean cosine similarity to the positive seeds,
the top-K kept, and the list re-ranked in fixed-length segments by
similarity to the negative seeds: within each segment the entities most
similar to the negative seeds sink, while segment membership (and so the
coarse positive ranking) is preserved. Also mines contrastive training
pairs from the expansion for the fine-tuning sidecar.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .classgen import Query
from .corpus import Corpus, sentences_for
from .embeddings import EmbeddingStore, cosine_similarity
from .errors import DataValidationError, UsageError

DEFAULT_SEGMENT_LENGTH = 10
DEFAULT_SIMILAR_LIST_SIZE = 10  # |L_pos| = |L_neg| target during pair mining


@dataclass(frozen=True)
class RankedEntry:
    id: str
    score: float


@dataclass(frozen=True)
class RankedList:
    entries: tuple[RankedEntry, ...]

    def __post_init__(self):
        ids = [e.id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise UsageError("ranked list contains duplicate entities")

    def ids(self) -> list[str]:
        return [e.id for e in self.entries]

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


def score_positive(store: EmbeddingStore, entity_id: str, pos_seeds: Sequence[str]) -> float:
    """Mean cosine similarity between the entity and the positive seeds."""
    if not pos_seeds:
        raise UsageError("need at least one seed to score against")
    vec = store.vector(entity_id)
    return sum(cosine_similarity(vec, store.vector(s)) for s in pos_seeds) / len(pos_seeds)


def score_negative(store: EmbeddingStore, entity_id: str, neg_seeds: Sequence[str]) -> float:
    """Mean cosine similarity to the negative seeds."""
    return score_positive(store, entity_id, neg_seeds)


def expand(store: EmbeddingStore, corpus: Corpus, query: Query, k: int) -> RankedList:
    """Top-``k`` candidates by positive-seed similarity.

    Seeds of both polarities are excluded from the output. Ties break by
    entity id ascending so runs are reproducible.
    """
    if k <= 0:
        raise UsageError(f"K must be positive, got {k}")
    seeds = query.all_seeds
    scored = [
        (eid, score_positive(store, eid, query.pos_seeds))
        for eid in sorted(corpus.candidate_vocab)
        if eid not in seeds
    ]
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return RankedList(tuple(RankedEntry(eid, s) for eid, s in scored[:k]))


def segmented_rerank(ranked: RankedList, neg_scores: Mapping[str, float], segment_length: int) -> RankedList:
    """Stable ascending sort by negative score inside each consecutive
    segment of ``segment_length`` entries (the last may be shorter).

    Segment membership is unchanged, so this is a within-segment
    permutation only; equal scores keep their original order.
    """
    if segment_length < 1:
        raise UsageError(f"segment length must be >= 1, got {segment_length}")
    missing = [e.id for e in ranked if e.id not in neg_scores]
    if missing:
        raise UsageError(f"no negative score for entities: {missing[:5]}")
    out: list[RankedEntry] = []
    entries = list(ranked.entries)
    for lo in range(0, len(entries), segment_length):
        segment = entries[lo : lo + segment_length]
        out.extend(sorted(segment, key=lambda e: neg_scores[e.id]))  # stable
    return RankedList(tuple(out))


def run_retexpan(
    store: EmbeddingStore,
    corpus: Corpus,
    query: Query,
    k: int,
    segment_length: int = DEFAULT_SEGMENT_LENGTH,
    rerank: bool = True,
) -> RankedList:
    """Full retrieval pipeline: expansion then segmented re-ranking.

    ``rerank=False`` gives the ablation that ignores negative seeds.
    """
    ranked = expand(store, corpus, query, k)
    if not rerank or not ranked.entries:
        return ranked
    neg_scores = {e.id: score_negative(store, e.id, query.neg_seeds) for e in ranked}
    return segmented_rerank(ranked, neg_scores, segment_length)


# --- contrastive pair mining -------------------------------------------------

@dataclass(frozen=True)
class ContrastiveSample:
    sentence_id: str
    entity_id: str
    text: str


Pair = tuple[ContrastiveSample, ContrastiveSample]


@dataclass(frozen=True)
class ContrastivePairSet:
    positives: tuple[Pair, ...]
    negatives: tuple[Pair, ...]

    def positive_entity_pairs(self) -> set[tuple[str, str]]:
        return {_entity_pair(a, b) for a, b in self.positives}

    def negative_entity_pairs(self) -> set[tuple[str, str]]:
        return {_entity_pair(a, b) for a, b in self.negatives}


def _entity_pair(a: ContrastiveSample, b: ContrastiveSample) -> tuple[str, str]:
    return (a.entity_id, b.entity_id) if a.entity_id <= b.entity_id else (b.entity_id, a.entity_id)


def seed_context_suffix(corpus: Corpus, query: Query) -> str:
    pos = ", ".join(corpus.name_of(e) for e in query.pos_seeds)
    neg = ", ".join(corpus.name_of(e) for e in query.neg_seeds)
    return f" | positive seeds: {pos}; negative seeds: {neg}"


def select_similar_lists(
    ranked: RankedList,
    query: Query,
    t: int,
    ranker,
    corpus: Corpus,
) -> tuple[list[str], list[str]]:
    """Ask the similarity ranker for the ``t`` expansion entities closest
    to each seed polarity; entities claimed by both sides are dropped
    from both before pair construction."""
    if t <= 0:
        raise UsageError(f"T must be positive, got {t}")
    if t > len(ranked):
        raise UsageError(f"T={t} exceeds expansion size {len(ranked)}")
    candidates = [corpus.name_of(eid) for eid in ranked.ids()]
    name_to_id: dict[str, str] = {}
    for eid in ranked.ids():  # ambiguous display names resolve to the smallest id
        name_to_id.setdefault(corpus.name_of(eid), eid)

    def resolve(names: Iterable[str]) -> list[str]:
        out = []
        for name in names:
            eid = name_to_id.get(name)
            if eid is not None and eid not in out:
                out.append(eid)
        return out

    pos_names = ranker.rank_similar(candidates, [corpus.name_of(e) for e in query.pos_seeds], t)
    neg_names = ranker.rank_similar(candidates, [corpus.name_of(e) for e in query.neg_seeds], t)
    pos_ids, neg_ids = resolve(pos_names), resolve(neg_names)
    both = set(pos_ids) & set(neg_ids)
    return [e for e in pos_ids if e not in both], [e for e in neg_ids if e not in both]


def mine_contrastive_pairs(
    ranked: RankedList,
    pos_list: Sequence[str],
    neg_list: Sequence[str],
    other_class_pool: Sequence[str],
    corpus: Corpus,
    query: Query,
    samples_per_entity: int = 2,
) -> ContrastivePairSet:
    """Build the contrastive training pairs for one query.

    Positive pairs: within the positive-leaning list, within the
    negative-leaning list, and each entity with itself. Negative pairs:
    across the two lists, and from either list against entities of other
    fine classes. Every sample is a sentence mentioning its entity with
    the query's seed entities appended, so the pair's ultra-fine-grained
    context is explicit.
    """
    in_l0 = set(ranked.ids())
    pos_list, neg_list = list(dict.fromkeys(pos_list)), list(dict.fromkeys(neg_list))
    if set(pos_list) & set(neg_list):
        raise UsageError("positive and negative entity lists overlap")
    for eid in (*pos_list, *neg_list):
        if eid not in in_l0:
            raise UsageError(f"entity {eid!r} is not part of the expansion list")
    pool = list(dict.fromkeys(other_class_pool))
    if set(pool) & in_l0:
        raise UsageError("other-class pool must be disjoint from the expansion list")

    suffix = seed_context_suffix(corpus, query)

    def samples(eid: str) -> list[ContrastiveSample]:
        sents = sentences_for(corpus, eid, cap=samples_per_entity)
        return [ContrastiveSample(s.id, eid, s.text + suffix) for s in sents]

    by_entity = {eid: samples(eid) for eid in (*pos_list, *neg_list, *pool)}
    usable = {eid for eid, ss in by_entity.items() if ss}

    def first(eid: str) -> ContrastiveSample:
        return by_entity[eid][0]

    def cross(left: Sequence[str], right: Sequence[str]) -> list[Pair]:
        return [
            (first(a), first(b))
            for a in left if a in usable
            for b in right if b in usable
        ]

    def within(ids: Sequence[str]) -> list[Pair]:
        ids = [e for e in ids if e in usable]
        return [(first(a), first(b)) for i, a in enumerate(ids) for b in ids[i + 1 :]]

    def self_pairs(ids: Sequence[str]) -> list[Pair]:
        out = []
        for eid in ids:
            if eid not in usable:
                continue
            ss = by_entity[eid]
            out.append((ss[0], ss[1] if len(ss) > 1 else ss[0]))
        return out

    positives = within(pos_list) + within(neg_list) + self_pairs([*pos_list, *neg_list])
    negatives = cross(pos_list, neg_list) + cross([*pos_list, *neg_list], pool)
    return ContrastivePairSet(positives=tuple(positives), negatives=tuple(negatives))


# --- pairs.jsonl -------------------------------------------------------------
# {"polarity": "positive"|"negative",
#  "a": {"sentence_id", "entity_id", "text"}, "b": {...}}

def _sample_record(s: ContrastiveSample) -> dict:
    return {"sentence_id": s.sentence_id, "entity_id": s.entity_id, "text": s.text}


def pair_records(pairs: ContrastivePairSet) -> list[dict]:
    return [
        {"polarity": polarity, "a": _sample_record(a), "b": _sample_record(b)}
        for polarity, group in (("positive", pairs.positives), ("negative", pairs.negatives))
        for a, b in group
    ]


def save_pairs(pairs: ContrastivePairSet, path: Path | str) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for rec in pair_records(pairs):
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def load_pairs(path: Path | str) -> ContrastivePairSet:
    positives, negatives = [], []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if "header" in rec:
                continue
            try:
                pair = (
                    ContrastiveSample(**rec["a"]),
                    ContrastiveSample(**rec["b"]),
                )
                (positives if rec["polarity"] == "positive" else negatives).append(pair)
            except (KeyError, TypeError) as exc:
                raise DataValidationError(f"malformed pair record: {exc}", [f"{path}:{lineno}"]) from None
    return ContrastivePairSet(positives=tuple(positives), negatives=tuple(negatives))


# --- ranked-list output ------------------------------------------------------
# {"query_index": int, "framework": "ret"|"gen",
#  "entries": [{"id": str, "score": float, "rank": int}]}

def ranked_list_record(query_index: int, framework: str, ranked: RankedList) -> dict:
    return {
        "query_index": query_index,
        "framework": framework,
        "entries": [
            {"id": e.id, "score": e.score, "rank": i + 1} for i, e in enumerate(ranked.entries)
        ],
    }


def save_ranked_lists(records: Iterable[dict], path: Path | str) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def load_ranked_lists(path: Path | str) -> list[dict]:
    out = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if "header" in rec:
                continue
            if "query_index" not in rec or "entries" not in rec:
                raise DataValidationError("malformed ranked-list record", [f"{path}:{lineno}"])
            out.append(rec)
    return out
