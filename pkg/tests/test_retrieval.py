"""Expansion, segmented re-ranking, and contrastive pair mining."""
from __future__ import annotations

import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from esekit.classgen import Query
from esekit.corpus import Entity, Mention, Sentence, build_corpus
from esekit.embeddings import EmbeddingStore, cosine_similarity
from esekit.errors import DataValidationError, UsageError
from esekit.metrics import evaluate
from esekit.providers.stubs import CannedRanker
from esekit.retrieval import (
    RankedEntry,
    RankedList,
    expand,
    load_pairs,
    load_ranked_lists,
    mine_contrastive_pairs,
    pair_records,
    ranked_list_record,
    run_retexpan,
    save_pairs,
    save_ranked_lists,
    score_negative,
    score_positive,
    seed_context_suffix,
    segmented_rerank,
    select_similar_lists,
)


def store_from(vectors: dict[str, list[float]]) -> EmbeddingStore:
    dim = len(next(iter(vectors.values())))
    store = EmbeddingStore(dim=dim)
    for eid, vec in vectors.items():
        store.add(eid, np.asarray(vec, dtype=float), 1)
    return store


def tiny_corpus(entity_ids):
    ents = [Entity(eid, eid, {}) for eid in entity_ids]
    sents = [
        Sentence(f"s-{eid}", f"{eid} appears here", (Mention(eid, 0, len(eid), eid),))
        for eid in entity_ids
    ]
    return build_corpus(ents, sents, {})


class TestScoring:
    def test_mean_cosine_over_seeds(self):
        store = store_from({"q": [1.0, 0.0], "a": [1.0, 0.0], "b": [0.0, 1.0]})
        score = score_positive(store, "q", ["a", "b"])
        assert score == pytest.approx((1.0 + 0.0) / 2)

    def test_empty_seeds_rejected(self):
        store = store_from({"q": [1.0, 0.0]})
        with pytest.raises(UsageError):
            score_positive(store, "q", [])

    def test_negative_scoring_is_same_functional(self):
        store = store_from({"q": [1.0, 1.0], "a": [1.0, 0.0]})
        assert score_negative(store, "q", ["a"]) == score_positive(store, "q", ["a"])


def six_seed_query():
    return Query(pos_seeds=("p1", "p2", "p3"), neg_seeds=("n1", "n2", "n3"))


class TestExpand:
    def make(self):
        # c1 nearest the positive axis, then c2, then c3; seeds elsewhere.
        vectors = {
            "p1": [1.0, 0.0], "p2": [1.0, 0.1], "p3": [0.9, 0.0],
            "n1": [0.0, 1.0], "n2": [0.1, 1.0], "n3": [0.0, 0.9],
            "c1": [1.0, 0.05], "c2": [0.8, 0.3], "c3": [0.2, 1.0],
        }
        return store_from(vectors), tiny_corpus(vectors)

    def test_order_and_seed_exclusion(self):
        store, corpus = self.make()
        ranked = expand(store, corpus, six_seed_query(), k=10)
        assert ranked.ids() == ["c1", "c2", "c3"]

    def test_k_truncates(self):
        store, corpus = self.make()
        assert expand(store, corpus, six_seed_query(), k=2).ids() == ["c1", "c2"]

    def test_ties_break_by_id(self):
        vectors = {
            "p1": [1.0, 0.0], "p2": [1.0, 0.0], "p3": [1.0, 0.0],
            "n1": [0.0, 1.0], "n2": [0.0, 1.0], "n3": [0.0, 1.0],
            "z": [2.0, 0.0], "a": [3.0, 0.0], "m": [0.5, 0.0],
        }
        ranked = expand(store_from(vectors), tiny_corpus(vectors), six_seed_query(), k=3)
        assert ranked.ids() == ["a", "m", "z"]

    def test_k_must_be_positive(self):
        store, corpus = self.make()
        with pytest.raises(UsageError):
            expand(store, corpus, six_seed_query(), k=0)

    def test_duplicate_entries_rejected(self):
        with pytest.raises(UsageError):
            RankedList((RankedEntry("a", 1.0), RankedEntry("a", 0.5)))

    def test_in_class_cluster_precedes_outsiders(self):
        # Planted geometry: class members cluster around one direction,
        # outsiders around an orthogonal one, so every target must rank
        # above every outsider and match a brute-force sort exactly.
        rng = np.random.default_rng(42)
        vectors: dict[str, list[float]] = {}
        members = [f"t{i:02d}" for i in range(30)]
        outsiders = [f"x{i:02d}" for i in range(30)]
        for i, eid in enumerate(members):
            base = np.array([1.0, 0.0, 0.0, 0.0])
            vectors[eid] = (base + 0.05 * rng.standard_normal(4)).tolist()
        for eid in outsiders:
            base = np.array([0.0, 1.0, 0.0, 0.0])
            vectors[eid] = (base + 0.05 * rng.standard_normal(4)).tolist()
        store, corpus = store_from(vectors), tiny_corpus(vectors)
        query = Query(pos_seeds=tuple(members[:3]), neg_seeds=tuple(outsiders[:3]))
        ranked = expand(store, corpus, query, k=len(vectors))

        oracle = sorted(
            (eid for eid in vectors if eid not in query.all_seeds),
            key=lambda eid: (-score_positive(store, eid, query.pos_seeds), eid),
        )
        assert ranked.ids() == oracle
        positions = {eid: i for i, eid in enumerate(ranked.ids())}
        assert max(positions[e] for e in members if e in positions) < min(
            positions[e] for e in outsiders if e in positions
        )


class TestSegmentedRerank:
    def test_hand_oracle(self):
        ranked = RankedList(tuple(RankedEntry(f"e{i}", 1.0 - i / 10) for i in range(1, 5)))
        neg = {"e1": 0.9, "e2": 0.1, "e3": 0.8, "e4": 0.2}
        out = segmented_rerank(ranked, neg, segment_length=2)
        assert out.ids() == ["e2", "e1", "e4", "e3"]

    def test_scores_travel_with_entries(self):
        ranked = RankedList((RankedEntry("a", 0.7), RankedEntry("b", 0.6)))
        out = segmented_rerank(ranked, {"a": 0.9, "b": 0.1}, segment_length=2)
        assert [(e.id, e.score) for e in out] == [("b", 0.6), ("a", 0.7)]

    def test_equal_scores_keep_original_order(self):
        ranked = RankedList(tuple(RankedEntry(f"e{i}", 1.0 - i / 10) for i in range(4)))
        out = segmented_rerank(ranked, {e.id: 0.5 for e in ranked}, segment_length=4)
        assert out.ids() == ranked.ids()

    def test_validation(self):
        ranked = RankedList((RankedEntry("a", 1.0),))
        with pytest.raises(UsageError):
            segmented_rerank(ranked, {"a": 0.1}, segment_length=0)
        with pytest.raises(UsageError, match="no negative score"):
            segmented_rerank(ranked, {}, segment_length=2)

    @given(
        n=st.integers(min_value=0, max_value=40),
        seg=st.integers(min_value=1, max_value=50),
        seed=st.integers(min_value=0, max_value=10_000),
    )
    @settings(max_examples=120, deadline=None)
    def test_invariants(self, n, seg, seed):
        rng = random.Random(seed)
        ranked = RankedList(tuple(RankedEntry(f"e{i:03d}", rng.random()) for i in range(n)))
        neg = {e.id: rng.choice([0.0, 0.25, 0.5, 0.75, 1.0]) for e in ranked}
        out = segmented_rerank(ranked, neg, segment_length=seg)

        assert sorted(out.ids()) == sorted(ranked.ids())
        for lo in range(0, n, seg):
            assert set(out.ids()[lo : lo + seg]) == set(ranked.ids()[lo : lo + seg])
        if seg >= n:
            assert out.ids() == [
                e.id for e in sorted(ranked.entries, key=lambda e: neg[e.id])
            ]


class TestRunRetexpan:
    def test_rerank_false_is_plain_expansion(self, planted):
        q = planted.queries[0]
        plain = expand(planted.store, planted.corpus, q, k=20)
        ablation = run_retexpan(planted.store, planted.corpus, q, k=20, rerank=False)
        assert ablation.ids() == plain.ids()

    def test_rerank_beats_ablation_on_planted_corpus(self, planted):
        def report(rerank: bool):
            records = [
                ranked_list_record(i, "ret", run_retexpan(
                    planted.store, planted.corpus, q, k=10, segment_length=10, rerank=rerank,
                ))
                for i, q in enumerate(planted.queries)
            ]
            return evaluate(records, planted.dataset, ks=(10,))

        with_rerank = report(True).cell("Comb", "MAP", 10)
        without = report(False).cell("Comb", "MAP", 10)
        assert with_rerank > without

    def test_rerank_only_moves_within_segments(self, planted):
        q = planted.queries[0]
        pre = run_retexpan(planted.store, planted.corpus, q, k=20, segment_length=5, rerank=False)
        post = run_retexpan(planted.store, planted.corpus, q, k=20, segment_length=5, rerank=True)
        for lo in range(0, 20, 5):
            assert set(pre.ids()[lo : lo + 5]) == set(post.ids()[lo : lo + 5])


class TestSelectSimilarLists:
    def make(self):
        ids = ["p1", "p2", "p3", "n1", "n2", "n3", "c1", "c2", "c3", "c4"]
        corpus = tiny_corpus(ids)
        ranked = RankedList(tuple(RankedEntry(f"c{i}", 1.0 - i / 10) for i in range(1, 5)))
        return corpus, ranked

    def test_polarity_lists(self):
        corpus, ranked = self.make()
        ranker = CannedRanker({
            ("p1", "p2", "p3"): ["c1", "c2"],
            ("n1", "n2", "n3"): ["c3", "c4"],
        })
        pos, neg = select_similar_lists(ranked, six_seed_query(), 2, ranker, corpus)
        assert (pos, neg) == (["c1", "c2"], ["c3", "c4"])

    def test_contested_entities_dropped_from_both(self):
        corpus, ranked = self.make()
        ranker = CannedRanker({
            ("p1", "p2", "p3"): ["c1", "c2"],
            ("n1", "n2", "n3"): ["c2", "c3"],
        })
        pos, neg = select_similar_lists(ranked, six_seed_query(), 2, ranker, corpus)
        assert (pos, neg) == (["c1"], ["c3"])

    def test_unknown_names_ignored(self):
        corpus, ranked = self.make()
        ranker = CannedRanker({
            ("p1", "p2", "p3"): ["mystery", "c1"],
            ("n1", "n2", "n3"): ["c4"],
        })
        pos, neg = select_similar_lists(ranked, six_seed_query(), 2, ranker, corpus)
        assert (pos, neg) == (["c1"], ["c4"])

    def test_t_validation(self):
        corpus, ranked = self.make()
        ranker = CannedRanker({})
        with pytest.raises(UsageError):
            select_similar_lists(ranked, six_seed_query(), 0, ranker, corpus)
        with pytest.raises(UsageError):
            select_similar_lists(ranked, six_seed_query(), 5, ranker, corpus)


def mining_corpus():
    ids = ["p1", "p2", "p3", "n1", "n2", "n3", "a", "b", "c", "d", "o1", "o2"]
    ents = [Entity(eid, eid, {}) for eid in ids]
    sents = []
    for eid in ids:
        for j in (1, 2):
            text = f"{eid} sample {j}"
            sents.append(
                Sentence(f"s-{eid}-{j}", text, (Mention(eid, 0, len(eid), eid),))
            )
    return build_corpus(ents, sents, {})


class TestMinePairs:
    def setup_method(self):
        self.corpus = mining_corpus()
        self.ranked = RankedList(tuple(
            RankedEntry(eid, 1.0) for eid in ["a", "b", "c", "d"]
        ))
        self.query = six_seed_query()

    def test_suffix_spells_out_seeds(self):
        suffix = seed_context_suffix(self.corpus, self.query)
        assert suffix == " | positive seeds: p1, p2, p3; negative seeds: n1, n2, n3"

    def test_pair_composition(self):
        pairs = mine_contrastive_pairs(
            self.ranked, ["a", "b"], ["c", "d"], ["o1", "o2"], self.corpus, self.query,
        )
        # within-pos (a,b), within-neg (c,d), self pairs for all four
        assert pairs.positive_entity_pairs() == {
            ("a", "b"), ("c", "d"), ("a", "a"), ("b", "b"), ("c", "c"), ("d", "d"),
        }
        # across lists, plus each list against the other-class pool
        assert pairs.negative_entity_pairs() == {
            ("a", "c"), ("a", "d"), ("b", "c"), ("b", "d"),
            ("a", "o1"), ("a", "o2"), ("b", "o1"), ("b", "o2"),
            ("c", "o1"), ("c", "o2"), ("d", "o1"), ("d", "o2"),
        }

    def test_texts_carry_seed_context(self):
        pairs = mine_contrastive_pairs(
            self.ranked, ["a"], ["c"], [], self.corpus, self.query,
        )
        suffix = seed_context_suffix(self.corpus, self.query)
        for a, b in (*pairs.positives, *pairs.negatives):
            assert a.text.endswith(suffix) and b.text.endswith(suffix)
        (cross,) = pairs.negatives
        assert cross[0].text == "a sample 1" + suffix

    def test_self_pair_uses_two_sentences(self):
        pairs = mine_contrastive_pairs(
            self.ranked, ["a"], [], [], self.corpus, self.query,
        )
        (self_pair,) = pairs.positives
        assert self_pair[0].sentence_id == "s-a-1"
        assert self_pair[1].sentence_id == "s-a-2"

    def test_validation(self):
        with pytest.raises(UsageError, match="overlap"):
            mine_contrastive_pairs(
                self.ranked, ["a", "b"], ["b"], [], self.corpus, self.query,
            )
        with pytest.raises(UsageError, match="not part of the expansion"):
            mine_contrastive_pairs(
                self.ranked, ["p1"], ["c"], [], self.corpus, self.query,
            )
        with pytest.raises(UsageError, match="disjoint"):
            mine_contrastive_pairs(
                self.ranked, ["a"], ["c"], ["b"], self.corpus, self.query,
            )

    def test_file_round_trip(self, tmp_path):
        pairs = mine_contrastive_pairs(
            self.ranked, ["a", "b"], ["c"], ["o1"], self.corpus, self.query,
        )
        path = tmp_path / "pairs.jsonl"
        save_pairs(pairs, path)
        again = load_pairs(path)
        assert again == pairs

    def test_record_shape(self):
        pairs = mine_contrastive_pairs(
            self.ranked, ["a"], ["c"], [], self.corpus, self.query,
        )
        rec = pair_records(pairs)[0]
        assert set(rec) == {"polarity", "a", "b"}
        assert set(rec["a"]) == {"sentence_id", "entity_id", "text"}

    def test_malformed_pair_record(self, tmp_path):
        path = tmp_path / "pairs.jsonl"
        path.write_text('{"polarity": "positive", "a": {"sentence_id": "s"}}\n')
        with pytest.raises(DataValidationError) as exc:
            load_pairs(path)
        assert any(":1" in line for line in exc.value.lines)


class TestRankedListFiles:
    def test_record_numbers_ranks_from_one(self):
        ranked = RankedList((RankedEntry("a", 0.9), RankedEntry("b", 0.8)))
        rec = ranked_list_record(3, "ret", ranked)
        assert rec == {
            "query_index": 3,
            "framework": "ret",
            "entries": [
                {"id": "a", "score": 0.9, "rank": 1},
                {"id": "b", "score": 0.8, "rank": 2},
            ],
        }

    def test_round_trip_skips_header(self, tmp_path):
        ranked = RankedList((RankedEntry("a", 0.9),))
        records = [ranked_list_record(0, "ret", ranked)]
        path = tmp_path / "results.jsonl"
        save_ranked_lists([{"header": {}}] + records, path)
        assert load_ranked_lists(path) == records

    def test_malformed_record(self, tmp_path):
        path = tmp_path / "results.jsonl"
        path.write_text('{"framework": "ret"}\n')
        with pytest.raises(DataValidationError):
            load_ranked_lists(path)
