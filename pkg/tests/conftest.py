"""Shared fixtures: a small attribute-rich corpus, a 500-entity planted
corpus with a known recoverable class structure, and the acceptance
criterion reporter (one PASS/FAIL line per criterion in the terminal
summary)."""
from __future__ import annotations

import random
from contextlib import contextmanager
from dataclasses import dataclass, replace

import pytest

from esekit.artifacts import write_jsonl
from esekit.classgen import AttributeConstraint, Query, UltraClass, sample_queries
from esekit.corpus import Corpus, corpus_from_records
from esekit.embeddings import EmbeddingStore, build_store
from esekit.providers.stubs import HashingEmbedder

# --- acceptance criterion reporting --------------------------------------------

CRITERION_RESULTS: list[tuple[str, bool]] = []


@contextmanager
def criterion(name: str):
    """Record one acceptance criterion outcome for the terminal summary."""
    try:
        yield
    except BaseException:
        CRITERION_RESULTS.append((name, False))
        raise
    CRITERION_RESULTS.append((name, True))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not CRITERION_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok in CRITERION_RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {name}")


# --- small widget corpus --------------------------------------------------------

def widget_records() -> tuple[list[dict], list[dict], list[dict]]:
    """Six red widgets, six blue widgets, four gadgets. Big enough for
    query sampling (both attribute value pools exceed the seed maximum)
    and small enough to read in a failure message."""
    entities, sentences = [], []

    def add(eid, name, attrs, texts):
        entities.append({"id": eid, "name": name, "attrs": attrs})
        for j, text in enumerate(texts):
            start = text.index(name)
            sentences.append(
                {
                    "id": f"s-{eid}-{j}",
                    "text": text,
                    "mentions": [{"entity_id": eid, "start": start, "end": start + len(name)}],
                }
            )

    for i in range(6):
        name = f"redwidget{i}"
        add(f"w{i}", name, {"color": "red", "size": "small" if i < 3 else "large"},
            [f"{name} ships with a attrred finish", f"workers prefer {name} in attrred lots"])
    for i in range(6):
        name = f"bluewidget{i}"
        add(f"w{i + 6}", name, {"color": "blue", "size": "small" if i < 3 else "large"},
            [f"{name} ships with a attrblue finish", f"workers prefer {name} in attrblue lots"])
    for i in range(4):
        name = f"gadget{i}"
        add(f"g{i}", name, {"kind": "gadget"}, [f"{name} hums on the bench"])

    classes = [
        {"name": "widget", "entity_ids": [f"w{i}" for i in range(12)]},
        {"name": "gadget", "entity_ids": [f"g{i}" for i in range(4)]},
    ]
    return entities, sentences, classes


@pytest.fixture()
def widget_corpus() -> Corpus:
    entities, sentences, classes = widget_records()
    return corpus_from_records(entities, sentences, classes)


@pytest.fixture()
def widget_files(tmp_path):
    """The widget corpus written to disk in the documented JSONL shapes."""
    entities, sentences, classes = widget_records()
    paths = {
        "entities": tmp_path / "entities.jsonl",
        "sentences": tmp_path / "sentences.jsonl",
        "classes": tmp_path / "fine_classes.jsonl",
    }
    write_jsonl(paths["entities"], entities)
    write_jsonl(paths["sentences"], sentences)
    write_jsonl(paths["classes"], classes)
    return paths


# --- planted corpus --------------------------------------------------------------
#
# 500 entities. The "phone" fine class holds 30 android models and 20 ios
# models, distinguished by a platform attribute and by attribute marker
# tokens in their sentences; 450 miscellaneous entities fill the rest.
# One ios entity (e030) also carries the android marker in its text, so
# it climbs into the pre-rerank top ten on positive-seed similarity while
# keeping high negative-seed similarity; segmented re-ranking sinks it to
# the bottom of its segment. All parameters below are frozen: with
# embedder seed 1, marker weight 0.7, and query seed 7 the rerank run
# scores CombMAP@10 = 94.50 against 90.47 without re-ranking.

PLANTED_WORDS = [
    "lumen", "quartz", "ember", "drift", "copse", "vale", "onyx", "plume", "cinder", "grove",
    "fjord", "latch", "murmur", "pylon", "sable", "torrent", "umber", "vertex", "willow", "zephyr",
    "basalt", "crag", "dune", "eddy", "flint", "gale", "heath", "islet", "jetty", "knoll",
]

PLANTED_EMBEDDER_SEED = 1
PLANTED_MARKER_WEIGHT = 0.7
PLANTED_QUERY_SEED = 7
PLANTED_CAP = 4


def planted_records() -> tuple[list[dict], list[dict], list[dict]]:
    rng = random.Random(11)
    entities, sentences = [], []

    def add(eid, name, attrs, texts):
        entities.append({"id": eid, "name": name, "attrs": attrs})
        for j, text in enumerate(texts):
            sentences.append(
                {
                    "id": f"s_{eid}_{j}",
                    "text": text,
                    "mentions": [{"entity_id": eid, "start": 0, "end": len(name)}],
                }
            )

    def noisy(k: int) -> str:
        return " ".join(rng.sample(PLANTED_WORDS, k)) if k else "plain"

    for i in range(30):
        eid, name, k = f"e{i:03d}", f"droid{i:02d}", (i * 5) % 18
        add(eid, name, {"platform": "android", "kind": "phone"},
            [f"{name} ships attrphone attrandroid with {noisy(k)}",
             f"{name} runs attrphone attrandroid beside {noisy(k)}"])
    for i in range(30, 50):
        eid, name = f"e{i:03d}", f"ionix{i:02d}"
        if i == 30:  # the cross-platform model that intrudes pre-rerank
            texts = [f"{name} ships attrphone attrios attrandroid with {noisy(6)}",
                     f"{name} runs attrphone attrios attrandroid beside {noisy(6)}"]
        else:
            texts = [f"{name} ships attrphone attrios with plain",
                     f"{name} runs attrphone attrios beside plain"]
        add(eid, name, {"platform": "ios", "kind": "phone"}, texts)
    for i in range(50, 500):
        eid, name = f"e{i:03d}", f"thing{i:03d}"
        add(eid, name, {"kind": "misc"}, [f"{name} sits in aisle {noisy(2)} crate"])

    classes = [
        {"name": "phone", "entity_ids": [f"e{i:03d}" for i in range(50)]},
        {"name": "misc", "entity_ids": [f"e{i:03d}" for i in range(50, 500)]},
    ]
    return entities, sentences, classes


def planted_ultra_class() -> UltraClass:
    uc = UltraClass(
        fine_class="phone",
        pos_constraints=(AttributeConstraint("platform", "android"),),
        neg_constraints=(AttributeConstraint("platform", "ios"),),
        pos_targets=frozenset(f"e{i:03d}" for i in range(30)),
        neg_targets=frozenset(f"e{i:03d}" for i in range(30, 50)),
    )
    return replace(uc, queries=sample_queries(uc, seed=PLANTED_QUERY_SEED))


@dataclass(frozen=True)
class PlantedFixture:
    corpus: Corpus
    store: EmbeddingStore
    ultra_class: UltraClass

    @property
    def dataset(self) -> list[UltraClass]:
        return [self.ultra_class]

    @property
    def queries(self) -> tuple[Query, ...]:
        return self.ultra_class.queries


@pytest.fixture(scope="session")
def planted() -> PlantedFixture:
    entities, sentences, classes = planted_records()
    corpus = corpus_from_records(entities, sentences, classes)
    embedder = HashingEmbedder(
        dim=64, seed=PLANTED_EMBEDDER_SEED, marker_weight=PLANTED_MARKER_WEIGHT
    )
    store = build_store(corpus, embedder, cap=PLANTED_CAP)
    return PlantedFixture(corpus=corpus, store=store, ultra_class=planted_ultra_class())
