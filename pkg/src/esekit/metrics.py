"""Rank metrics over expansion results.

Every metric lives on a 0 to 100 scale. A query is scored twice: against
the wanted entities (higher is better) and against the unwanted ones
(lower is better); the combined cell ``(pos + 100 - neg) / 2`` rewards
finding the former while avoiding the latter. Seed entities are excluded
from both the ranked list and the ground truth before scoring, since the
task is discovering new entities.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .classgen import UltraClass
from .errors import DataValidationError, UsageError
from .retrieval import RankedList

DEFAULT_KS = (10, 20, 50, 100)

AP_NORMALIZERS = ("min_k_g", "hits", "g")
DEFAULT_NORMALIZER = "min_k_g"


def _ids(ranked) -> list[str]:
    if isinstance(ranked, RankedList):
        return ranked.ids()
    ids = list(ranked)
    if len(set(ids)) != len(ids):
        raise UsageError("ranked list contains duplicate entities")
    return ids


def precision_at_k(ranked, gold: Iterable[str], k: int) -> float:
    """100 * |top-k hits| / k; lists shorter than k count the missing
    tail as misses."""
    if k < 1:
        raise UsageError(f"K must be >= 1, got {k}")
    gold = set(gold)
    hits = sum(1 for eid in _ids(ranked)[:k] if eid in gold)
    return 100.0 * hits / k


def ap_at_k(ranked, gold: Iterable[str], k: int, normalizer: str = DEFAULT_NORMALIZER) -> float:
    """Average precision at cutoff ``k``.

    The sum of precision-at-hit values is divided by a configurable
    normalizer: ``min_k_g`` (the default) uses min(k, |gold|) so a
    perfect prefix scores 100 even when |gold| > k, ``hits`` uses the
    number of hits actually retrieved, ``g`` uses |gold|.
    """
    if k < 1:
        raise UsageError(f"K must be >= 1, got {k}")
    if normalizer not in AP_NORMALIZERS:
        raise UsageError(f"unknown AP normalizer {normalizer!r}; pick one of {AP_NORMALIZERS}")
    gold = set(gold)
    if not gold:
        raise UsageError("ground truth is empty")
    hits = 0
    total = 0.0
    for i, eid in enumerate(_ids(ranked)[:k], start=1):
        if eid in gold:
            hits += 1
            total += hits / i
    if normalizer == "min_k_g":
        denom = min(k, len(gold))
    elif normalizer == "g":
        denom = len(gold)
    else:
        if hits == 0:
            return 0.0
        denom = hits
    return 100.0 * total / denom


def map_at_k(runs: Sequence[tuple], k: int, normalizer: str = DEFAULT_NORMALIZER) -> float:
    """Mean of ap_at_k over (ranked list, ground truth) pairs."""
    if not runs:
        raise UsageError("no queries to evaluate")
    return sum(ap_at_k(ranked, gold, k, normalizer) for ranked, gold in runs) / len(runs)


def comb(pos: float, neg: float) -> float:
    """Merge a wanted-entity score and an unwanted-entity score."""
    for name, value in (("pos", pos), ("neg", neg)):
        if not 0.0 <= value <= 100.0:
            raise UsageError(f"{name} score {value} outside [0, 100]")
    return (pos + 100.0 - neg) / 2.0


# --- full report --------------------------------------------------------------

POLARITIES = ("Pos", "Neg", "Comb")
METRICS = ("MAP", "P")


@dataclass(frozen=True)
class MetricReport:
    """Aggregate cells plus per-query detail.

    ``cells[polarity][metric][k]`` holds the aggregate value; each
    polarity also carries an ``Avg`` cell, the mean over its eight
    metric cells. Queries whose ground truth is empty after seed
    removal are skipped for that polarity and listed in ``skipped``.
    """

    ks: tuple[int, ...]
    normalizer: str
    query_count: int
    cells: dict
    per_query: tuple[dict, ...] = ()
    skipped: tuple[dict, ...] = ()

    def cell(self, polarity: str, metric: str, k: int) -> float:
        return self.cells[polarity][metric][k]

    def avg(self, polarity: str) -> float:
        return self.cells[polarity]["Avg"]

    def to_json(self) -> dict:
        return {
            "ks": list(self.ks),
            "normalizer": self.normalizer,
            "query_count": self.query_count,
            "cells": {
                pol: {
                    "MAP": {str(k): self.cells[pol]["MAP"][k] for k in self.ks},
                    "P": {str(k): self.cells[pol]["P"][k] for k in self.ks},
                    "Avg": self.cells[pol]["Avg"],
                }
                for pol in POLARITIES
            },
            "per_query": list(self.per_query),
            "skipped": list(self.skipped),
        }

    def to_json_text(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    def render_table(self) -> str:
        headers = [f"MAP@{k}" for k in self.ks] + [f"P@{k}" for k in self.ks] + ["Avg"]
        width = max(len(h) for h in headers) + 2
        label_width = max(len(p) for p in POLARITIES) + 2
        lines = ["".ljust(label_width) + "".join(h.rjust(width) for h in headers)]
        for pol in POLARITIES:
            row = [self.cells[pol]["MAP"][k] for k in self.ks]
            row += [self.cells[pol]["P"][k] for k in self.ks]
            row.append(self.cells[pol]["Avg"])
            lines.append(pol.ljust(label_width) + "".join(f"{v:.2f}".rjust(width) for v in row))
        return "\n".join(lines) + "\n"


def flatten_queries(dataset: Sequence[UltraClass]) -> list[tuple[UltraClass, "object"]]:
    """Global query ordering: dataset order, then per-class query order.

    Expansion commands assign ``query_index`` by this same enumeration,
    so results and ground truth line up by position.
    """
    out = []
    for uc in dataset:
        for q in uc.queries:
            out.append((uc, q))
    return out


def _entry_ids(record: Mapping, where: str) -> list[str]:
    entries = record.get("entries")
    if not isinstance(entries, list):
        raise DataValidationError(f"ranked-list record missing 'entries' ({where})")
    ordered = sorted(entries, key=lambda e: e.get("rank", 0))
    ids = [e.get("id") for e in ordered]
    if any(not isinstance(i, str) for i in ids):
        raise DataValidationError(f"ranked-list entry missing 'id' ({where})")
    if len(set(ids)) != len(ids):
        raise DataValidationError(f"duplicate entities in ranked list ({where})")
    return ids


def evaluate(
    results: Sequence[Mapping],
    dataset: Sequence[UltraClass],
    ks: Sequence[int] = DEFAULT_KS,
    normalizer: str = DEFAULT_NORMALIZER,
) -> MetricReport:
    """Score ranked-list records against their queries' target sets.

    Each record's ``query_index`` must resolve into the dataset's global
    query enumeration. Seeds are removed from list and targets first.
    """
    if not results:
        raise UsageError("no results to evaluate")
    ks = tuple(ks)
    if not ks or any(k < 1 for k in ks):
        raise UsageError(f"invalid cutoffs {ks}")
    queries = flatten_queries(dataset)

    sums: dict = {pol: {m: {k: 0.0 for k in ks} for m in METRICS} for pol in ("Pos", "Neg")}
    counts: dict = {pol: 0 for pol in ("Pos", "Neg")}
    per_query: list[dict] = []
    skipped: list[dict] = []

    for record in results:
        qi = record.get("query_index")
        if not isinstance(qi, int) or not 0 <= qi < len(queries):
            raise DataValidationError(f"query_index {qi!r} does not resolve to a dataset query")
        uc, query = queries[qi]
        seeds = query.all_seeds
        ids = [eid for eid in _entry_ids(record, f"query_index {qi}") if eid not in seeds]
        detail: dict = {"query_index": qi, "fine_class": uc.fine_class}
        for pol, targets in (("Pos", uc.pos_targets), ("Neg", uc.neg_targets)):
            gold = set(targets) - seeds
            if not gold:
                skipped.append({"query_index": qi, "polarity": pol, "reason": "empty ground truth"})
                detail[pol] = None
                continue
            cells = {
                "MAP": {k: ap_at_k(ids, gold, k, normalizer) for k in ks},
                "P": {k: precision_at_k(ids, gold, k) for k in ks},
            }
            detail[pol] = cells
            counts[pol] += 1
            for m in METRICS:
                for k in ks:
                    sums[pol][m][k] += cells[m][k]
        per_query.append(detail)

    cells: dict = {}
    for pol in ("Pos", "Neg"):
        if counts[pol] == 0:
            raise UsageError(f"every query was skipped for the {pol} polarity")
        pol_cells = {m: {k: sums[pol][m][k] / counts[pol] for k in ks} for m in METRICS}
        pol_cells["Avg"] = sum(pol_cells[m][k] for m in METRICS for k in ks) / (len(METRICS) * len(ks))
        cells[pol] = pol_cells
    cells["Comb"] = {
        m: {k: comb(cells["Pos"][m][k], cells["Neg"][m][k]) for k in ks} for m in METRICS
    }
    cells["Comb"]["Avg"] = comb(cells["Pos"]["Avg"], cells["Neg"]["Avg"])

    return MetricReport(
        ks=ks,
        normalizer=normalizer,
        query_count=len(per_query),
        cells=cells,
        per_query=tuple(per_query),
        skipped=tuple(skipped),
    )
