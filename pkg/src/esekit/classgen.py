"""Ultra-fine-grained class generation from attribute combinations.

A fine-grained class plus positive and negative attribute-value
constraints defines an ultra class: the wanted targets are the class
members matching every positive constraint, the unwanted targets those
matching every negative constraint. Entities missing a constrained
attribute satisfy nothing. Generation enumerates attribute sets and all
observed values (deterministic inventory); randomness enters only in
seed-entity sampling for queries.
"""
from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, replace
from itertools import combinations, product
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import Corpus
from .errors import DataValidationError, UsageError

MIN_SEEDS = 3
MAX_SEEDS = 5
QUERIES_PER_CLASS = 3


@dataclass(frozen=True)
class AttributeConstraint:
    attribute: str
    value: str

    def __post_init__(self):
        if not self.attribute or not self.value:
            raise UsageError("attribute constraints need a non-empty attribute and value")


@dataclass(frozen=True)
class Query:
    pos_seeds: tuple[str, ...]
    neg_seeds: tuple[str, ...]

    def __post_init__(self):
        for side, seeds in (("positive", self.pos_seeds), ("negative", self.neg_seeds)):
            if not (MIN_SEEDS <= len(seeds) <= MAX_SEEDS):
                raise UsageError(
                    f"{side} seed list must have {MIN_SEEDS}..{MAX_SEEDS} entities, got {len(seeds)}"
                )
            if len(set(seeds)) != len(seeds):
                raise UsageError(f"{side} seed list contains duplicates")
        if set(self.pos_seeds) & set(self.neg_seeds):
            raise UsageError("positive and negative seed lists must be disjoint")

    @property
    def all_seeds(self) -> frozenset[str]:
        return frozenset(self.pos_seeds) | frozenset(self.neg_seeds)


@dataclass(frozen=True)
class UltraClass:
    fine_class: str
    pos_constraints: tuple[AttributeConstraint, ...]
    neg_constraints: tuple[AttributeConstraint, ...]
    pos_targets: frozenset[str]
    neg_targets: frozenset[str]
    queries: tuple[Query, ...] = ()


def _satisfies(attrs, constraints: Iterable[AttributeConstraint]) -> bool:
    return all(attrs.get(c.attribute) == c.value for c in constraints)


def derive_targets(
    corpus: Corpus,
    fine_class: str,
    pos_constraints: Sequence[AttributeConstraint],
    neg_constraints: Sequence[AttributeConstraint],
) -> tuple[frozenset[str], frozenset[str]]:
    """Filter the fine class down to (wanted, unwanted) target sets.

    An empty constraint list is a vacuous conjunction: every member
    qualifies. The two sets may overlap when the constraint attributes
    differ (an entity can match both sides).
    """
    members = corpus.fine_class_members(fine_class)
    pos = frozenset(e for e in members if _satisfies(corpus.entities[e].attrs, pos_constraints))
    neg = frozenset(e for e in members if _satisfies(corpus.entities[e].attrs, neg_constraints))
    return pos, neg


def sample_queries(
    ultra_class: UltraClass,
    k_min: int = MIN_SEEDS,
    k_max: int = MAX_SEEDS,
    count: int = QUERIES_PER_CLASS,
    seed: int = 0,
) -> tuple[Query, ...]:
    """Draw ``count`` queries with disjoint seed lists.

    Positive seeds come from the wanted targets, negative seeds from the
    unwanted targets minus the positive picks (an entity in both pools is
    kept as a positive seed). Deterministic given ``seed``.
    """
    pos_pool = sorted(ultra_class.pos_targets)
    neg_pool = sorted(ultra_class.neg_targets)
    if len(pos_pool) < k_max or len(neg_pool) < k_max:
        raise UsageError(
            f"target pools too small for seed sampling: |pos|={len(pos_pool)}, |neg|={len(neg_pool)}, need {k_max}"
        )
    rng = random.Random(seed)
    queries = []
    for _ in range(count):
        for _attempt in range(20):
            k_pos = rng.randint(k_min, k_max)
            k_neg = rng.randint(k_min, k_max)
            pos_seeds = tuple(rng.sample(pos_pool, k_pos))
            remaining = [e for e in neg_pool if e not in pos_seeds]
            if len(remaining) >= k_neg:
                queries.append(Query(pos_seeds=pos_seeds, neg_seeds=tuple(rng.sample(remaining, k_neg))))
                break
        else:
            raise UsageError("could not sample disjoint seed lists from overlapping target pools")
    return tuple(queries)


def _class_seed(seed: int, fine_class: str, pos, neg) -> int:
    """Stable per-class child seed so query sampling is independent of
    enumeration order."""
    key = json.dumps(
        [fine_class, [[c.attribute, c.value] for c in pos], [[c.attribute, c.value] for c in neg]],
        sort_keys=True,
    )
    digest = hashlib.sha256(f"{seed}:{key}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def generate_ultra_classes(
    corpus: Corpus,
    fine_class: str,
    m: int = 1,
    n: int = 1,
    n_thred: int = 6,
    seed: int = 0,
    queries_per_class: int = QUERIES_PER_CLASS,
    k_min: int = MIN_SEEDS,
    k_max: int = MAX_SEEDS,
) -> list[UltraClass]:
    """Enumerate ultra classes with ``m`` positive and ``n`` negative
    attribute constraints over the fine class.

    All size-m / size-n attribute subsets are paired with every observed
    value combination; a combination survives only if both target sets
    exceed ``n_thred``. When the positive and negative constraint sets
    share an attribute, combinations assigning it the same value on both
    sides are skipped (the wanted-minus-unwanted target would be empty).
    Returns an empty list when nothing survives.
    """
    if n_thred < 1:
        raise UsageError("n_thred must be >= 1")
    members = corpus.fine_class_members(fine_class)
    attr_values: dict[str, set[str]] = {}
    for eid in members:
        for attr, value in corpus.entities[eid].attrs.items():
            attr_values.setdefault(attr, set()).add(value)
    attributes = sorted(attr_values)
    if len(attributes) < max(m, n):
        raise UsageError(
            f"fine class {fine_class!r} has {len(attributes)} attributes, need at least {max(m, n)}"
        )

    def constraint_sets(size: int):
        for attrs in combinations(attributes, size):
            for values in product(*(sorted(attr_values[a]) for a in attrs)):
                yield tuple(AttributeConstraint(a, v) for a, v in zip(attrs, values))

    out: list[UltraClass] = []
    neg_sets = list(constraint_sets(n))
    for pos_constraints in constraint_sets(m):
        pos_by_attr = {c.attribute: c.value for c in pos_constraints}
        for neg_constraints in neg_sets:
            if any(pos_by_attr.get(c.attribute) == c.value for c in neg_constraints):
                continue
            pos_targets, neg_targets = derive_targets(corpus, fine_class, pos_constraints, neg_constraints)
            if len(pos_targets) <= n_thred or len(neg_targets) <= n_thred:
                continue
            uc = UltraClass(
                fine_class=fine_class,
                pos_constraints=pos_constraints,
                neg_constraints=neg_constraints,
                pos_targets=pos_targets,
                neg_targets=neg_targets,
            )
            child = _class_seed(seed, fine_class, pos_constraints, neg_constraints)
            try:
                queries = sample_queries(uc, k_min=k_min, k_max=k_max, count=queries_per_class, seed=child)
            except UsageError:
                continue  # pools too entangled to draw disjoint seeds
            out.append(replace(uc, queries=queries))
    return out


# --- ultra_classes.jsonl ---------------------------------------------------
# {"fine_class": str, "pos": [[attr, val], ...], "neg": [[attr, val], ...],
#  "P": [ids], "N": [ids], "queries": [{"pos_seeds": [ids], "neg_seeds": [ids]}]}

def ultra_class_to_record(uc: UltraClass) -> dict:
    return {
        "fine_class": uc.fine_class,
        "pos": [[c.attribute, c.value] for c in uc.pos_constraints],
        "neg": [[c.attribute, c.value] for c in uc.neg_constraints],
        "P": sorted(uc.pos_targets),
        "N": sorted(uc.neg_targets),
        "queries": [
            {"pos_seeds": list(q.pos_seeds), "neg_seeds": list(q.neg_seeds)} for q in uc.queries
        ],
    }


def ultra_class_from_record(rec: dict) -> UltraClass:
    try:
        return UltraClass(
            fine_class=rec["fine_class"],
            pos_constraints=tuple(AttributeConstraint(a, v) for a, v in rec["pos"]),
            neg_constraints=tuple(AttributeConstraint(a, v) for a, v in rec["neg"]),
            pos_targets=frozenset(rec["P"]),
            neg_targets=frozenset(rec["N"]),
            queries=tuple(
                Query(tuple(q["pos_seeds"]), tuple(q["neg_seeds"])) for q in rec.get("queries", [])
            ),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataValidationError(f"malformed ultra-class record: {exc}") from None


def save_ultra_classes(classes: Iterable[UltraClass], path: Path | str) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for uc in classes:
            fh.write(json.dumps(ultra_class_to_record(uc), ensure_ascii=False) + "\n")


def load_ultra_classes(path: Path | str) -> list[UltraClass]:
    out = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if "header" in rec:
                continue
            try:
                out.append(ultra_class_from_record(rec))
            except DataValidationError as exc:
                raise DataValidationError(str(exc), [f"{path}:{lineno}"]) from None
    return out
