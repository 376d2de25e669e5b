"""Corpus loading, validation, and indexing.

The corpus is three line-delimited JSON files (UTF-8, one record per line):

- ``entities.jsonl``:     ``{"id": str, "name": str, "attrs": {str: str}}``
- ``sentences.jsonl``:    ``{"id": str, "text": str, "mentions":
  [{"entity_id": str, "start": int, "end": int, "surface": str}]}``
- ``fine_classes.jsonl``: ``{"name": str, "entity_ids": [str]}``

Mentions use character offsets into the raw sentence text. A sentence may
mention the same entity more than once; each mention later yields one
embedding sample. After loading, a :class:`Corpus` is immutable and safe
for concurrent reads.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Mapping

from .errors import DataValidationError, UsageError

DEFAULT_SENTENCE_CAP = 64


@dataclass(frozen=True)
class Mention:
    entity_id: str
    start: int
    end: int
    surface: str


@dataclass(frozen=True)
class Entity:
    id: str
    name: str
    attrs: Mapping[str, str]


@dataclass(frozen=True)
class Sentence:
    id: str
    text: str
    mentions: tuple[Mention, ...]

    def mentions_of(self, entity_id: str) -> tuple[Mention, ...]:
        return tuple(m for m in self.mentions if m.entity_id == entity_id)


@dataclass(frozen=True)
class CorpusStats:
    entities: int
    sentences: int
    classes: int
    mentions: int
    candidate_vocab: int
    entities_without_sentences: int


@dataclass(frozen=True)
class Corpus:
    """Fully indexed dataset. ``sentence_index`` is the exact inverse of
    the mention lists; ``candidate_vocab`` is a subset of the entity ids."""

    entities: dict[str, Entity]
    sentences: dict[str, Sentence]
    sentence_index: dict[str, tuple[str, ...]]
    fine_classes: dict[str, frozenset[str]]
    candidate_vocab: frozenset[str]

    def entity(self, entity_id: str) -> Entity:
        try:
            return self.entities[entity_id]
        except KeyError:
            raise UsageError(f"unknown entity id: {entity_id!r}") from None

    def name_of(self, entity_id: str) -> str:
        return self.entity(entity_id).name

    def fine_class_members(self, name: str) -> frozenset[str]:
        try:
            return self.fine_classes[name]
        except KeyError:
            raise UsageError(f"unknown fine class: {name!r}") from None

    def entities_without_sentences(self) -> frozenset[str]:
        """Vocabulary entries with zero mentions; kept but flagged so the
        generative pipeline can still rank them."""
        return frozenset(e for e in self.entities if not self.sentence_index.get(e))


def sentences_for(corpus: Corpus, entity_id: str, cap: int = DEFAULT_SENTENCE_CAP) -> list[Sentence]:
    """Up to ``cap`` sentences mentioning the entity, in sentence-id order."""
    if cap < 1:
        raise UsageError(f"cap must be >= 1, got {cap}")
    corpus.entity(entity_id)
    ids = corpus.sentence_index.get(entity_id, ())
    return [corpus.sentences[sid] for sid in ids[:cap]]


def corpus_stats(corpus: Corpus) -> CorpusStats:
    return CorpusStats(
        entities=len(corpus.entities),
        sentences=len(corpus.sentences),
        classes=len(corpus.fine_classes),
        mentions=sum(len(s.mentions) for s in corpus.sentences.values()),
        candidate_vocab=len(corpus.candidate_vocab),
        entities_without_sentences=len(corpus.entities_without_sentences()),
    )


class _LineErrors:
    """Collects per-line validation problems so a load reports them all."""

    def __init__(self, limit: int = 50):
        self.lines: list[str] = []
        self.limit = limit

    def add(self, path: Path | str, lineno: int, problem: str) -> None:
        if len(self.lines) < self.limit:
            self.lines.append(f"{path}:{lineno}: {problem}")

    def raise_if_any(self, what: str) -> None:
        if self.lines:
            raise DataValidationError(f"invalid {what}", self.lines)


def _iter_jsonl(path: Path) -> Iterator[tuple[int, dict]]:
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataValidationError(
                    "malformed JSON record", [f"{path}:{lineno}: {exc.msg}"]
                ) from None
            if not isinstance(record, dict):
                raise DataValidationError(
                    "malformed record", [f"{path}:{lineno}: expected a JSON object"]
                )
            if "header" in record:  # artifact metadata line, not data
                continue
            yield lineno, record


def _require(record: dict, key: str, kind: type, path: Path, lineno: int, errs: _LineErrors):
    value = record.get(key)
    if not isinstance(value, kind):
        errs.add(path, lineno, f"field {key!r} missing or not {kind.__name__}")
        return None
    return value


def build_corpus(
    entities: Iterable[Entity],
    sentences: Iterable[Sentence],
    fine_classes: Mapping[str, Iterable[str]],
    candidate_vocab: Iterable[str] | None = None,
) -> Corpus:
    """Index already-parsed records into a Corpus, enforcing invariants.

    Storage is normalized (sorted by id) so two corpora built from the
    same records in any order compare equal.
    """
    entity_map: dict[str, Entity] = {}
    errs = _LineErrors()
    for ent in entities:
        if ent.id in entity_map:
            errs.add("<entities>", 0, f"duplicate entity id {ent.id!r}")
            continue
        if not ent.name:
            errs.add("<entities>", 0, f"entity {ent.id!r} has empty name")
            continue
        entity_map[ent.id] = ent
    errs.raise_if_any("entities")

    sentence_map: dict[str, Sentence] = {}
    for sent in sentences:
        if sent.id in sentence_map:
            errs.add("<sentences>", 0, f"duplicate sentence id {sent.id!r}")
            continue
        for m in sent.mentions:
            if m.entity_id not in entity_map:
                errs.add("<sentences>", 0, f"sentence {sent.id!r} mentions unknown entity {m.entity_id!r}")
            if not (0 <= m.start < m.end <= len(sent.text)):
                errs.add("<sentences>", 0, f"sentence {sent.id!r} mention span [{m.start},{m.end}) out of bounds")
            elif sent.text[m.start:m.end] != m.surface:
                errs.add("<sentences>", 0, f"sentence {sent.id!r} surface mismatch at [{m.start},{m.end})")
        sentence_map[sent.id] = sent
    errs.raise_if_any("sentences")

    class_map: dict[str, frozenset[str]] = {}
    for name, ids in fine_classes.items():
        members = frozenset(ids)
        unknown = members - entity_map.keys()
        if unknown:
            errs.add("<classes>", 0, f"class {name!r} references unknown entities {sorted(unknown)}")
        class_map[name] = members
    errs.raise_if_any("fine classes")

    vocab = frozenset(candidate_vocab) if candidate_vocab is not None else frozenset(entity_map)
    unknown = vocab - entity_map.keys()
    if unknown:
        raise DataValidationError("candidate vocabulary references unknown entities", sorted(unknown))

    index: dict[str, list[str]] = {}
    for sid in sorted(sentence_map):
        for m in sentence_map[sid].mentions:
            bucket = index.setdefault(m.entity_id, [])
            if not bucket or bucket[-1] != sid:
                bucket.append(sid)

    return Corpus(
        entities={eid: entity_map[eid] for eid in sorted(entity_map)},
        sentences={sid: sentence_map[sid] for sid in sorted(sentence_map)},
        sentence_index={eid: tuple(sids) for eid, sids in sorted(index.items())},
        fine_classes={name: class_map[name] for name in sorted(class_map)},
        candidate_vocab=vocab,
    )


def load_corpus(entity_file: Path | str, sentence_file: Path | str, class_file: Path | str) -> Corpus:
    """Load and validate the three corpus files.

    Any validation failure aborts with a line-numbered report covering
    every offending record found (up to a cap).
    """
    entity_file, sentence_file, class_file = Path(entity_file), Path(sentence_file), Path(class_file)
    errs = _LineErrors()

    entities: list[Entity] = []
    seen_entities: set[str] = set()
    for lineno, rec in _iter_jsonl(entity_file):
        eid = _require(rec, "id", str, entity_file, lineno, errs)
        name = _require(rec, "name", str, entity_file, lineno, errs)
        attrs = rec.get("attrs", {})
        if not isinstance(attrs, dict) or not all(
            isinstance(k, str) and isinstance(v, str) for k, v in attrs.items()
        ):
            errs.add(entity_file, lineno, "field 'attrs' must map strings to strings")
            continue
        if eid is None or name is None:
            continue
        if not name:
            errs.add(entity_file, lineno, f"entity {eid!r} has empty name")
            continue
        if eid in seen_entities:
            errs.add(entity_file, lineno, f"duplicate entity id {eid!r}")
            continue
        seen_entities.add(eid)
        entities.append(Entity(id=eid, name=name, attrs=dict(attrs)))
    errs.raise_if_any(f"entity file {entity_file}")

    sentences: list[Sentence] = []
    seen_sentences: set[str] = set()
    for lineno, rec in _iter_jsonl(sentence_file):
        sid = _require(rec, "id", str, sentence_file, lineno, errs)
        text = _require(rec, "text", str, sentence_file, lineno, errs)
        raw_mentions = rec.get("mentions", [])
        if sid is None or text is None or not isinstance(raw_mentions, list):
            if not isinstance(raw_mentions, list):
                errs.add(sentence_file, lineno, "field 'mentions' must be a list")
            continue
        if sid in seen_sentences:
            errs.add(sentence_file, lineno, f"duplicate sentence id {sid!r}")
            continue
        seen_sentences.add(sid)
        mentions = []
        for m in raw_mentions:
            if not isinstance(m, dict):
                errs.add(sentence_file, lineno, "mention must be an object")
                continue
            try:
                mention = Mention(
                    entity_id=m["entity_id"], start=int(m["start"]),
                    end=int(m["end"]), surface=m.get("surface", ""),
                )
            except (KeyError, TypeError, ValueError):
                errs.add(sentence_file, lineno, "mention missing entity_id/start/end")
                continue
            if mention.entity_id not in seen_entities:
                errs.add(sentence_file, lineno, f"mention references unknown entity {mention.entity_id!r}")
                continue
            if not (0 <= mention.start < mention.end <= len(text)):
                errs.add(sentence_file, lineno, f"mention span [{mention.start},{mention.end}) out of bounds")
                continue
            if not mention.surface:
                mention = Mention(mention.entity_id, mention.start, mention.end, text[mention.start:mention.end])
            elif text[mention.start:mention.end] != mention.surface:
                errs.add(sentence_file, lineno, f"surface form mismatch at [{mention.start},{mention.end})")
                continue
            mentions.append(mention)
        sentences.append(Sentence(id=sid, text=text, mentions=tuple(mentions)))
    errs.raise_if_any(f"sentence file {sentence_file}")

    classes: dict[str, list[str]] = {}
    for lineno, rec in _iter_jsonl(class_file):
        name = _require(rec, "name", str, class_file, lineno, errs)
        ids = rec.get("entity_ids")
        if name is None or not isinstance(ids, list):
            if not isinstance(ids, list):
                errs.add(class_file, lineno, "field 'entity_ids' must be a list")
            continue
        unknown = [i for i in ids if i not in seen_entities]
        if unknown:
            errs.add(class_file, lineno, f"class {name!r} references unknown entities {unknown[:5]}")
            continue
        classes.setdefault(name, []).extend(ids)
    errs.raise_if_any(f"class file {class_file}")

    return build_corpus(entities, sentences, classes)


def entity_record(ent: Entity) -> dict:
    return {"id": ent.id, "name": ent.name, "attrs": {k: ent.attrs[k] for k in sorted(ent.attrs)}}


def sentence_record(sent: Sentence) -> dict:
    return {
        "id": sent.id,
        "text": sent.text,
        "mentions": [
            {"entity_id": m.entity_id, "start": m.start, "end": m.end, "surface": m.surface}
            for m in sent.mentions
        ],
    }


def fine_class_record(name: str, members: Iterable[str]) -> dict:
    return {"name": name, "entity_ids": sorted(members)}


def corpus_records(corpus: Corpus) -> tuple[list[dict], list[dict], list[dict]]:
    """Canonical (sorted, byte-stable) record lists for the three files."""
    return (
        [entity_record(corpus.entities[eid]) for eid in sorted(corpus.entities)],
        [sentence_record(corpus.sentences[sid]) for sid in sorted(corpus.sentences)],
        [fine_class_record(name, corpus.fine_classes[name]) for name in sorted(corpus.fine_classes)],
    )


def corpus_from_records(entities: list[dict], sentences: list[dict], fine_classes: list[dict]) -> Corpus:
    """Build a corpus from already-parsed record dicts (the wire shape).

    Validation matches :func:`load_corpus`; problem locations are record
    indices instead of file line numbers.
    """
    errs = _LineErrors()

    ents: list[Entity] = []
    for i, rec in enumerate(entities, start=1):
        eid = _require(rec, "id", str, "<entities>", i, errs)
        name = _require(rec, "name", str, "<entities>", i, errs)
        attrs = rec.get("attrs", {})
        if not isinstance(attrs, dict) or not all(
            isinstance(k, str) and isinstance(v, str) for k, v in attrs.items()
        ):
            errs.add("<entities>", i, "field 'attrs' must map strings to strings")
            continue
        if eid is None or name is None:
            continue
        ents.append(Entity(id=eid, name=name, attrs=dict(attrs)))
    errs.raise_if_any("entity records")

    sents: list[Sentence] = []
    for i, rec in enumerate(sentences, start=1):
        sid = _require(rec, "id", str, "<sentences>", i, errs)
        text = _require(rec, "text", str, "<sentences>", i, errs)
        raw_mentions = rec.get("mentions", [])
        if not isinstance(raw_mentions, list):
            errs.add("<sentences>", i, "field 'mentions' must be a list")
            continue
        if sid is None or text is None:
            continue
        mentions = []
        for m in raw_mentions:
            if not isinstance(m, dict):
                errs.add("<sentences>", i, "mention must be an object")
                continue
            try:
                start, end = int(m["start"]), int(m["end"])
                entity_id = m["entity_id"]
            except (KeyError, TypeError, ValueError):
                errs.add("<sentences>", i, "mention missing entity_id/start/end")
                continue
            surface = m.get("surface", "") or text[max(start, 0) : max(end, 0)]
            mentions.append(Mention(entity_id, start, end, surface))
        sents.append(Sentence(id=sid, text=text, mentions=tuple(mentions)))
    errs.raise_if_any("sentence records")

    classes: dict[str, list[str]] = {}
    for i, rec in enumerate(fine_classes, start=1):
        name = _require(rec, "name", str, "<classes>", i, errs)
        ids = rec.get("entity_ids", [])
        if name is None or not isinstance(ids, list):
            if not isinstance(ids, list):
                errs.add("<classes>", i, "field 'entity_ids' must be a list")
            continue
        classes.setdefault(name, []).extend(ids)
    errs.raise_if_any("fine class records")

    return build_corpus(ents, sents, classes)


def save_corpus(corpus: Corpus, entity_file: Path | str, sentence_file: Path | str, class_file: Path | str) -> None:
    """Write the corpus back out in canonical (sorted, byte-stable) form."""
    ent_recs, sent_recs, class_recs = corpus_records(corpus)
    for path, recs in ((entity_file, ent_recs), (sentence_file, sent_recs), (class_file, class_recs)):
        with Path(path).open("w", encoding="utf-8") as fh:
            for rec in recs:
                fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
