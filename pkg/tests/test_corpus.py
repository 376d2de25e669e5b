"""Corpus loading, validation, and canonical serialization."""
from __future__ import annotations

import json

import pytest

from esekit.corpus import (
    Entity,
    Mention,
    Sentence,
    build_corpus,
    corpus_from_records,
    corpus_records,
    corpus_stats,
    load_corpus,
    save_corpus,
    sentences_for,
)
from esekit.errors import DataValidationError, UsageError


def small_entities():
    return [
        Entity("e1", "alpha", {"color": "red"}),
        Entity("e2", "beta", {"color": "blue"}),
        Entity("e3", "gamma", {}),
    ]


def small_sentences():
    return [
        Sentence("s1", "alpha met beta", (Mention("e1", 0, 5, "alpha"), Mention("e2", 10, 14, "beta"))),
        Sentence("s2", "beta waved", (Mention("e2", 0, 4, "beta"),)),
    ]


def small_corpus():
    return build_corpus(small_entities(), small_sentences(), {"pair": ["e1", "e2"], "solo": ["e3"]})


class TestBuildCorpus:
    def test_lookup_helpers(self):
        corpus = small_corpus()
        assert corpus.name_of("e1") == "alpha"
        assert corpus.entity("e2").attrs == {"color": "blue"}
        assert corpus.fine_class_members("pair") == {"e1", "e2"}
        assert corpus.candidate_vocab == {"e1", "e2", "e3"}
        assert corpus.entities_without_sentences() == {"e3"}

    def test_unknown_ids_raise_usage_errors(self):
        corpus = small_corpus()
        with pytest.raises(UsageError):
            corpus.entity("nope")
        with pytest.raises(UsageError):
            corpus.fine_class_members("nope")

    def test_storage_is_order_normalized(self):
        forward = small_corpus()
        backward = build_corpus(
            reversed(small_entities()), reversed(small_sentences()), {"solo": ["e3"], "pair": ["e2", "e1"]}
        )
        assert list(forward.entities) == list(backward.entities) == ["e1", "e2", "e3"]
        assert corpus_records(forward) == corpus_records(backward)

    def test_duplicate_entity_id_rejected(self):
        ents = small_entities() + [Entity("e1", "clone", {})]
        with pytest.raises(DataValidationError, match="entities"):
            build_corpus(ents, [], {})

    def test_empty_name_rejected(self):
        with pytest.raises(DataValidationError):
            build_corpus([Entity("e1", "", {})], [], {})

    def test_mention_span_and_surface_checked(self):
        ents = small_entities()
        bad_span = Sentence("s1", "alpha", (Mention("e1", 0, 99, "alpha"),))
        with pytest.raises(DataValidationError) as exc:
            build_corpus(ents, [bad_span], {})
        assert any("out of bounds" in line for line in exc.value.lines)
        bad_surface = Sentence("s1", "alpha met beta", (Mention("e1", 0, 5, "aloha"),))
        with pytest.raises(DataValidationError) as exc:
            build_corpus(ents, [bad_surface], {})
        assert any("surface mismatch" in line for line in exc.value.lines)

    def test_unknown_entity_references_rejected(self):
        ents = small_entities()
        ghost = Sentence("s1", "ghost walks", (Mention("zz", 0, 5, "ghost"),))
        with pytest.raises(DataValidationError) as exc:
            build_corpus(ents, [ghost], {})
        assert any("unknown entity" in line for line in exc.value.lines)
        with pytest.raises(DataValidationError) as exc:
            build_corpus(ents, [], {"pair": ["e1", "zz"]})
        assert any("unknown entities" in line for line in exc.value.lines)
        with pytest.raises(DataValidationError):
            build_corpus(ents, [], {}, candidate_vocab=["e1", "zz"])

    def test_sentence_index_has_no_consecutive_duplicates(self):
        ents = [Entity("e1", "echo", {})]
        twice = Sentence("s1", "echo echo", (Mention("e1", 0, 4, "echo"), Mention("e1", 5, 9, "echo")))
        corpus = build_corpus(ents, [twice], {})
        assert corpus.sentence_index["e1"] == ("s1",)

    def test_stats(self):
        stats = corpus_stats(small_corpus())
        assert stats.entities == 3
        assert stats.sentences == 2
        assert stats.classes == 2
        assert stats.mentions == 3
        assert stats.candidate_vocab == 3
        assert stats.entities_without_sentences == 1


class TestSentencesFor:
    def test_orders_by_sentence_id_and_caps(self):
        corpus = small_corpus()
        assert [s.id for s in sentences_for(corpus, "e2")] == ["s1", "s2"]
        assert [s.id for s in sentences_for(corpus, "e2", cap=1)] == ["s1"]

    def test_cap_must_be_positive(self):
        with pytest.raises(UsageError):
            sentences_for(small_corpus(), "e2", cap=0)

    def test_unknown_entity(self):
        with pytest.raises(UsageError):
            sentences_for(small_corpus(), "nope")


class TestFileRoundTrip:
    def test_save_then_load_is_identity(self, tmp_path):
        corpus = small_corpus()
        paths = (tmp_path / "e.jsonl", tmp_path / "s.jsonl", tmp_path / "c.jsonl")
        save_corpus(corpus, *paths)
        again = load_corpus(*paths)
        assert corpus_records(again) == corpus_records(corpus)

    def test_header_lines_are_skipped(self, tmp_path):
        corpus = small_corpus()
        paths = (tmp_path / "e.jsonl", tmp_path / "s.jsonl", tmp_path / "c.jsonl")
        save_corpus(corpus, *paths)
        for p in paths:
            p.write_text(json.dumps({"header": {"format": "x"}}) + "\n" + p.read_text())
        again = load_corpus(*paths)
        assert corpus_records(again) == corpus_records(corpus)

    def test_surface_backfilled_from_span(self, tmp_path):
        (tmp_path / "e.jsonl").write_text(json.dumps({"id": "e1", "name": "alpha"}) + "\n")
        (tmp_path / "s.jsonl").write_text(
            json.dumps({"id": "s1", "text": "alpha walks", "mentions": [{"entity_id": "e1", "start": 0, "end": 5}]})
            + "\n"
        )
        (tmp_path / "c.jsonl").write_text(json.dumps({"name": "all", "entity_ids": ["e1"]}) + "\n")
        corpus = load_corpus(tmp_path / "e.jsonl", tmp_path / "s.jsonl", tmp_path / "c.jsonl")
        assert corpus.sentences["s1"].mentions[0].surface == "alpha"

    def test_errors_carry_line_numbers(self, tmp_path):
        (tmp_path / "e.jsonl").write_text(
            json.dumps({"id": "e1", "name": "alpha"}) + "\n" + json.dumps({"id": "e2"}) + "\n"
        )
        (tmp_path / "s.jsonl").write_text("")
        (tmp_path / "c.jsonl").write_text("")
        with pytest.raises(DataValidationError) as exc:
            load_corpus(tmp_path / "e.jsonl", tmp_path / "s.jsonl", tmp_path / "c.jsonl")
        assert any(":2:" in line for line in exc.value.lines)

    def test_malformed_json_reported(self, tmp_path):
        (tmp_path / "e.jsonl").write_text("{not json\n")
        (tmp_path / "s.jsonl").write_text("")
        (tmp_path / "c.jsonl").write_text("")
        with pytest.raises(DataValidationError, match="malformed"):
            load_corpus(tmp_path / "e.jsonl", tmp_path / "s.jsonl", tmp_path / "c.jsonl")


class TestCorpusFromRecords:
    def test_matches_file_loading(self, widget_corpus, widget_files):
        from_files = load_corpus(
            widget_files["entities"], widget_files["sentences"], widget_files["classes"]
        )
        assert corpus_records(from_files) == corpus_records(widget_corpus)

    def test_mention_surface_backfill(self):
        corpus = corpus_from_records(
            [{"id": "e1", "name": "alpha"}],
            [{"id": "s1", "text": "alpha walks", "mentions": [{"entity_id": "e1", "start": 0, "end": 5}]}],
            [],
        )
        assert corpus.sentences["s1"].mentions[0].surface == "alpha"

    def test_errors_use_record_indices(self):
        with pytest.raises(DataValidationError) as exc:
            corpus_from_records([{"id": "e1", "name": "a"}, {"name": "missing id"}], [], [])
        assert any("<entities>:2" in line for line in exc.value.lines)

    def test_bad_mention_shape_is_validation_not_crash(self):
        with pytest.raises(DataValidationError):
            corpus_from_records(
                [{"id": "e1", "name": "alpha"}],
                [{"id": "s1", "text": "alpha", "mentions": [{"start": 0}]}],
                [],
            )

    def test_bad_attrs_rejected(self):
        with pytest.raises(DataValidationError) as exc:
            corpus_from_records([{"id": "e1", "name": "a", "attrs": {"size": 3}}], [], [])
        assert any("attrs" in line for line in exc.value.lines)

    def test_class_records_accumulate(self):
        corpus = corpus_from_records(
            [{"id": "e1", "name": "a"}, {"id": "e2", "name": "b"}],
            [],
            [{"name": "c", "entity_ids": ["e1"]}, {"name": "c", "entity_ids": ["e2"]}],
        )
        assert corpus.fine_class_members("c") == {"e1", "e2"}
