"""Trie-constrained generation, iterative expansion, and reasoning prompts."""
from __future__ import annotations

import logging
import math
import random

import pytest

from esekit.classgen import Query
from esekit.corpus import Entity, build_corpus
from esekit.errors import UsageError
from esekit.generation import (
    COT_MODES,
    END_TOKEN,
    CotContext,
    ExpansionState,
    allowed_next,
    build_generate_prompt,
    build_trie,
    constrained_beam_search,
    cot_augment,
    expansion_round,
    gen_similarity_score,
    parse_cot_reply,
    run_genexpan,
)
from esekit.providers.base import TokenizerSpec
from esekit.providers.stubs import TableLM

TOK = TokenizerSpec()


class TestTrie:
    def test_paths_and_acceptance(self):
        trie = build_trie({"e1": "new york", "e2": "new jersey", "e3": "boston"}, TOK.tokenize)
        assert trie.terminal_count == 3
        assert trie.leaf_count == 3
        assert trie.accepts("new york")
        assert not trie.accepts("new")
        assert not trie.accepts("chicago")
        assert trie.node_for(["new", "york"]).entity_id == "e1"

    def test_bare_names_double_as_ids(self):
        trie = build_trie(["a b", "c"], TOK.tokenize)
        assert trie.node_for(["a", "b"]).entity_id == "a b"

    def test_prefix_entity_is_terminal_but_not_leaf(self):
        trie = build_trie(["york", "york city"], TOK.tokenize)
        assert trie.terminal_count == 2
        assert trie.leaf_count == 1

    def test_collision_keeps_smaller_id(self):
        trie = build_trie({"id2": "same name", "id1": "same name"}, TOK.tokenize)
        assert trie.node_for(["same", "name"]).entity_id == "id1"
        assert trie.collisions == (("id1", "id2"),)
        assert trie.terminal_count == 1

    def test_build_errors(self):
        with pytest.raises(UsageError, match="empty"):
            build_trie({}, TOK.tokenize)
        with pytest.raises(UsageError, match="empty sequence"):
            build_trie({"e1": "   "}, TOK.tokenize)
        with pytest.raises(UsageError, match="end marker"):
            build_trie({"e1": f"bad {END_TOKEN}"}, TOK.tokenize)

    def test_invalid_prefix(self):
        trie = build_trie(["a"], TOK.tokenize)
        with pytest.raises(UsageError, match="not a valid trie path"):
            trie.node_for(["z"])

    def test_allowed_next(self):
        trie = build_trie(["york", "york city"], TOK.tokenize)
        assert allowed_next(trie, []) == {"york"}
        assert allowed_next(trie, ["york"]) == {"city", END_TOKEN}
        assert allowed_next(trie, ["york", "city"]) == {END_TOKEN}


def hand_trie():
    return build_trie(["a b", "a c", "d"], TOK.tokenize)


class TestBeamSearch:
    def test_hand_scores_and_tie_order(self):
        # root: renormalized over {a, d} -> 2/3, 1/3; unseen contexts are
        # uniform; the single-token end step costs nothing. All three
        # entities score log(1/3) and ties order by entity id.
        lm = TableLM(TOK, tables={(): {"a": 0.6, "d": 0.3, END_TOKEN: 0.1}})
        out = constrained_beam_search(lm, "go", hand_trie(), width=5, max_entities=5)
        assert [eid for eid, _ in out] == ["a b", "a c", "d"]
        for _, logprob in out:
            assert logprob == pytest.approx(math.log(1 / 3))

    def test_max_entities_truncates(self):
        lm = TableLM(TOK, tables={(): {"a": 0.6, "d": 0.3, END_TOKEN: 0.1}})
        out = constrained_beam_search(lm, "go", hand_trie(), width=5, max_entities=2)
        assert [eid for eid, _ in out] == ["a b", "a c"]

    def test_narrow_beam_prunes_weak_branches(self):
        trie = build_trie(["a x", "a y", "b"], TOK.tokenize)
        lm = TableLM(TOK, tables={(): {"a": 0.6, "b": 0.4}, ("a",): {"x": 0.9, "y": 0.1}})
        narrow = constrained_beam_search(lm, "go", trie, width=1, max_entities=5)
        assert [eid for eid, _ in narrow] == ["a x"]
        wide = constrained_beam_search(lm, "go", trie, width=3, max_entities=5)
        assert [eid for eid, _ in wide] == ["a x", "b", "a y"]
        assert wide[0][1] == pytest.approx(math.log(0.6 * 0.9))
        assert wide[1][1] == pytest.approx(math.log(0.4))

    def test_finished_entities_survive_narrow_beams(self):
        trie = build_trie(["a", "a b"], TOK.tokenize)
        lm = TableLM(TOK)  # uniform everywhere
        out = constrained_beam_search(lm, "go", trie, width=1, max_entities=5)
        assert [eid for eid, _ in out] == ["a", "a b"]
        for _, logprob in out:
            assert logprob == pytest.approx(math.log(0.5))

    def test_tokens_missing_from_logprobs_are_skipped(self):
        class PartialLM:
            def next_token_logprobs(self, prefix_tokens, allowed):
                return {sorted(allowed)[0]: 0.0}

        trie = build_trie(["a", "b"], TOK.tokenize)
        out = constrained_beam_search(PartialLM(), "go", trie, width=5, max_entities=5)
        assert [eid for eid, _ in out] == ["a"]

    def test_width_validation(self):
        with pytest.raises(UsageError):
            constrained_beam_search(TableLM(TOK), "go", hand_trie(), width=0, max_entities=5)


class TestGenSimilarity:
    def test_mean_of_per_token_geometric_means(self):
        class ScriptedLM:
            prefixes = []

            def score_continuation(self, prefix, continuation):
                self.prefixes.append(prefix)
                return {"s1": (math.log(0.04), 2), "s2": (math.log(0.3), 1)}[continuation]

        lm = ScriptedLM()
        score = gen_similarity_score(lm, "widget", ["s1", "s2"])
        assert score == pytest.approx((0.2 + 0.3) / 2)
        assert lm.prefixes == ["widget is similar to"] * 2

    def test_zero_token_continuation_rejected(self):
        class ZeroLM:
            def score_continuation(self, prefix, continuation):
                return (0.0, 0)

        with pytest.raises(UsageError, match="zero tokens"):
            gen_similarity_score(ZeroLM(), "widget", ["s1"])

    def test_needs_seeds(self):
        with pytest.raises(UsageError):
            gen_similarity_score(TableLM(TOK), "widget", [])


class TestGeneratePrompt:
    def test_exact_wording(self):
        assert build_generate_prompt(["a", "b", "c"]) == (
            "These entities share a semantic class: a, b, c. "
            "Another entity of the same class is"
        )

    def test_reasoning_prefix_prepends(self):
        assert build_generate_prompt(["a", "b", "c"], "The class is X. ").startswith(
            "The class is X. These entities"
        )

    def test_requires_three(self):
        with pytest.raises(UsageError):
            build_generate_prompt(["a", "b"])


def biased_fixture():
    """Corpus whose language model plainly prefers the planted targets.

    Targets dominate the generation table and sit close to the positive
    seeds under continuation scoring; distractors prefer the negative
    seeds instead.
    """
    targets = [f"tgt{i:02d}" for i in range(10)]
    distractors = [f"dst{i:02d}" for i in range(10)]
    pos = ["pos0", "pos1", "pos2"]
    neg = ["neg0", "neg1", "neg2"]
    names = targets + distractors + pos + neg
    corpus = build_corpus([Entity(n, n, {}) for n in names], [], {})
    trie = build_trie({n: n for n in names}, TOK.tokenize)

    tables = {
        (): {
            **{t: 1.0 for t in targets},
            **{d: 0.01 for d in distractors},
            **{s: 0.001 for s in pos + neg},
        },
    }
    for t in targets:
        tables[(t, "is", "similar", "to")] = {
            **{p: 0.9 for p in pos}, **{n: 1e-4 for n in neg},
        }
    for d in distractors:
        tables[(d, "is", "similar", "to")] = {
            **{p: 1e-4 for p in pos}, **{n: 0.9 for n in neg},
        }
    lm = TableLM(TOK, tables=tables)
    query = Query(pos_seeds=tuple(pos), neg_seeds=tuple(neg))
    return corpus, trie, lm, query, targets, distractors


class TestExpansionRound:
    def test_round_output(self):
        corpus, trie, lm, query, targets, _ = biased_fixture()
        state = ExpansionState(query=query)
        state = expansion_round(state, lm, trie, random.Random(0), corpus)
        assert state.round == 1
        assert state.expanded_ids() == targets[:5]
        assert all(e.round_entered == 1 for e in state.expanded)
        assert all(e.score == pytest.approx(0.9) for e in state.expanded)

    def test_expanded_never_reselected(self):
        corpus, trie, lm, query, targets, _ = biased_fixture()
        state = ExpansionState(query=query)
        rng = random.Random(0)
        state = expansion_round(state, lm, trie, rng, corpus)
        state = expansion_round(state, lm, trie, rng, corpus)
        assert state.expanded_ids() == targets

    def test_empty_generation_counts_the_round(self, caplog):
        class NullLM:
            def next_token_logprobs(self, prefix_tokens, allowed):
                return {}

        corpus, trie, _, query, _, _ = biased_fixture()
        state = ExpansionState(query=query)
        with caplog.at_level(logging.WARNING, logger="esekit.generation"):
            out = expansion_round(state, NullLM(), trie, random.Random(0), corpus)
        assert out.round == 1
        assert out.expanded == ()
        assert "no new entities" in caplog.text

    def test_count_validation(self):
        corpus, trie, lm, query, _, _ = biased_fixture()
        state = ExpansionState(query=query)
        with pytest.raises(UsageError):
            expansion_round(state, lm, trie, random.Random(0), corpus, per_round_generate=0)
        with pytest.raises(UsageError):
            expansion_round(state, lm, trie, random.Random(0), corpus, select_count=0)


class TestRunGenexpan:
    def test_planted_targets_outrank_distractors(self):
        corpus, trie, lm, query, targets, distractors = biased_fixture()
        ranked = run_genexpan(
            corpus, query, lm, trie, rounds=4, k=20, segment_length=10, rerank=False,
        )
        position = {eid: i for i, eid in enumerate(ranked.ids())}
        assert set(targets) <= set(position)
        assert max(position[t] for t in targets) < min(
            position[d] for d in distractors if d in position
        )

    def test_k_truncates_to_first_rounds(self):
        corpus, trie, lm, query, targets, _ = biased_fixture()
        ranked = run_genexpan(
            corpus, query, lm, trie, rounds=2, k=10, segment_length=10, rerank=False,
        )
        assert ranked.ids() == targets

    def test_rerank_permutes_within_segments_only(self):
        corpus, trie, lm, query, _, _ = biased_fixture()
        plain = run_genexpan(corpus, query, lm, trie, rounds=4, k=20, segment_length=5, rerank=False)
        rer = run_genexpan(corpus, query, lm, trie, rounds=4, k=20, segment_length=5, rerank=True)
        for lo in range(0, 20, 5):
            assert set(plain.ids()[lo : lo + 5]) == set(rer.ids()[lo : lo + 5])

    def test_deterministic_under_fixed_seed(self):
        corpus, trie, lm, query, _, _ = biased_fixture()

        def run():
            ranked = run_genexpan(corpus, query, lm, trie, rounds=3, k=15, segment_length=5, seed=9)
            return [(e.id, e.score) for e in ranked]

        assert run() == run()

    def test_validation(self):
        corpus, trie, lm, query, _, _ = biased_fixture()
        with pytest.raises(UsageError):
            run_genexpan(corpus, query, lm, trie, rounds=0, k=10, segment_length=5)
        with pytest.raises(UsageError):
            run_genexpan(corpus, query, lm, trie, rounds=1, k=0, segment_length=5)


class TestCotParsing:
    def test_full_reply(self):
        ctx = parse_cot_reply(
            "Class: Phone | Attr: platform=android, kind=phone | NegAttr: platform=ios"
        )
        assert ctx.class_name == "Phone"
        assert ctx.pos_attrs == ("platform=android", "kind=phone")
        assert ctx.neg_attrs == ("platform=ios",)

    def test_junk_degrades_to_empty(self):
        assert parse_cot_reply("nothing structured here").is_empty()
        assert parse_cot_reply("").is_empty()

    def test_case_insensitive_keys_and_semicolons(self):
        ctx = parse_cot_reply("class: Car | ATTR: fuel=electric; doors=2")
        assert ctx.class_name == "Car"
        assert ctx.pos_attrs == ("fuel=electric", "doors=2")

    def test_malformed_attribute_items_filtered(self):
        ctx = parse_cot_reply("Class: X | Attr: =bad, good=v, loose")
        assert ctx.pos_attrs == ("good=v",)

    def test_prompt_prefix_wording(self):
        ctx = CotContext("Phone", ("platform=android",), ("platform=ios",))
        assert ctx.prompt_prefix() == (
            "The class is Phone. Shared attributes: platform=android. "
            "Excluded attributes: platform=ios. "
        )
        assert CotContext().prompt_prefix() == ""


class TestCotAugment:
    def replies_lm(self):
        reply = "Class: Phone | Attr: platform=android | NegAttr: platform=ios"
        return TableLM(TOK, replies={"Entities:": reply})

    def test_mode_filters_parsed_fields(self):
        lm = self.replies_lm()
        by_mode = {
            mode: cot_augment(lm, ["a", "b"], ["c"], mode).context for mode in COT_MODES
        }
        assert by_mode["class_name"] == CotContext(class_name="Phone")
        assert by_mode["class_pos_attrs"] == CotContext(
            class_name="Phone", pos_attrs=("platform=android",)
        )
        assert by_mode["class_pos_neg_attrs"] == CotContext(
            class_name="Phone", pos_attrs=("platform=android",), neg_attrs=("platform=ios",)
        )

    def test_prompts_name_the_seeds(self):
        lm = self.replies_lm()
        rec = cot_augment(lm, ["a", "b"], ["c", "d"], "class_pos_neg_attrs")
        assert "Entities: a, b." in rec.prompt
        assert "Excluded entities: c, d." in rec.prompt

    def test_unknown_mode(self):
        with pytest.raises(UsageError, match="unknown reasoning mode"):
            cot_augment(self.replies_lm(), ["a"], None, "freeform")

    def test_unparseable_reply_warns(self, caplog):
        lm = TableLM(TOK, replies={"Entities:": "who knows"})
        with caplog.at_level(logging.WARNING, logger="esekit.generation"):
            rec = cot_augment(lm, ["a", "b"], None, "class_name")
        assert rec.context.is_empty()
        assert "could not be parsed" in caplog.text

    def test_transcript_shape(self):
        rec = cot_augment(self.replies_lm(), ["a"], ["b"], "class_pos_neg_attrs")
        assert rec.to_json() == {
            "mode": "class_pos_neg_attrs",
            "prompt": rec.prompt,
            "reply": "Class: Phone | Attr: platform=android | NegAttr: platform=ios",
            "parsed": {
                "class_name": "Phone",
                "pos_attrs": ["platform=android"],
                "neg_attrs": ["platform=ios"],
            },
        }
