"""Readers for the engine's documented JSONL artifacts.

Only the wire-documented shapes are consumed: entity records
{"id", "name", "attrs"}, sentence records {"id", "text", "mentions"},
and contrastive pair records {"polarity", "a", "b"} where each side is
{"sentence_id", "entity_id", "text"}. Leading header records
({"header": {...}}) are skipped.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError, DataError


def read_jsonl(path: Path | str) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"file not found: {path}")
    records = []
    for number, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{number}: invalid JSON: {exc}") from None
        if not isinstance(record, dict):
            raise DataError(f"{path}:{number}: expected an object")
        if "header" in record:
            continue
        records.append(record)
    return records


@dataclass(frozen=True)
class MaskedSample:
    """One mention with its span replaced by the mask token."""

    text: str
    entity_id: str


def masked_samples(
    entities_path: Path | str, sentences_path: Path | str, mask_token: str
) -> tuple[list[MaskedSample], list[str], list[str]]:
    """Returns (samples, sorted entity ids, raw sentence texts)."""
    entity_ids = []
    for rec in read_jsonl(entities_path):
        if "id" not in rec:
            raise DataError(f"entity record without id: {rec}")
        entity_ids.append(rec["id"])
    known = set(entity_ids)

    samples: list[MaskedSample] = []
    texts: list[str] = []
    for rec in read_jsonl(sentences_path):
        text = rec.get("text")
        if not isinstance(text, str):
            raise DataError(f"sentence record without text: {rec}")
        texts.append(text)
        for m in sorted(rec.get("mentions", []), key=lambda m: m.get("start", 0)):
            eid = m.get("entity_id")
            if eid not in known:
                raise DataError(f"mention references unknown entity {eid!r}")
            masked = text[: m["start"]] + mask_token + text[m["end"]:]
            samples.append(MaskedSample(text=masked, entity_id=eid))
    if not samples:
        raise DataError("corpus contains no entity mentions to train on")
    return samples, sorted(set(entity_ids)), texts


@dataclass(frozen=True)
class PairSide:
    sentence_id: str
    entity_id: str
    text: str


@dataclass(frozen=True)
class Pair:
    polarity: str
    a: PairSide
    b: PairSide


def load_pairs(path: Path | str) -> tuple[list[Pair], list[Pair]]:
    """Returns (positive pairs, negative pairs) from a mined-pair file."""
    positives, negatives = [], []
    for number, rec in enumerate(read_jsonl(path), start=1):
        try:
            pair = Pair(
                polarity=rec["polarity"],
                a=PairSide(**rec["a"]),
                b=PairSide(**rec["b"]),
            )
        except (KeyError, TypeError) as exc:
            raise DataError(f"{path}: record {number} is not a contrastive pair: {exc}") from None
        if pair.polarity == "positive":
            positives.append(pair)
        elif pair.polarity == "negative":
            negatives.append(pair)
        else:
            raise DataError(f"{path}: record {number} has unknown polarity {pair.polarity!r}")
    if not positives or not negatives:
        raise DataError("contrastive training needs both positive and negative pairs")
    return positives, negatives
