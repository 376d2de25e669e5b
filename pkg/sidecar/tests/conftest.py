"""Shared fixtures: a ten-sentence corpus with five entities, a small
mined-pair file in the documented shape, and briefly trained checkpoints
for the serving tests."""
from __future__ import annotations

import json

import pytest

NAMES = {
    "e01": "blue widget",
    "e02": "red widget",
    "e03": "green gadget",
    "e04": "small gizmo",
    "e05": "old crank",
}

SENTENCES = [
    ("s01", "the blue widget hums on the bench", "e01"),
    ("s02", "a red widget sits near the door", "e02"),
    ("s03", "the green gadget beeps twice daily", "e03"),
    ("s04", "that small gizmo rattles in the drawer", "e04"),
    ("s05", "an old crank turns the main wheel", "e05"),
    ("s06", "every morning the blue widget warms up", "e01"),
    ("s07", "nobody trusts the red widget after friday", "e02"),
    ("s08", "the green gadget lights the back room", "e03"),
    ("s09", "we oiled the small gizmo last week", "e04"),
    ("s10", "the old crank needs a new handle", "e05"),
]

CONTEXTS = {
    "p1": "the [MASK] hums on the bench",
    "p2": "every morning the [MASK] warms up",
    "p3": "a [MASK] sits near the door",
    "p4": "nobody trusts the [MASK] after friday",
    "n1": "the [MASK] beeps twice daily",
    "n2": "we oiled the [MASK] last week",
    "n3": "an [MASK] turns the main wheel",
}


def write_jsonl(path, records, header=None):
    with open(path, "w", encoding="utf-8") as f:
        if header is not None:
            f.write(json.dumps({"header": header}) + "\n")
        for rec in records:
            f.write(json.dumps(rec) + "\n")


def _side(sid, eid, key):
    return {"sentence_id": sid, "entity_id": eid, "text": CONTEXTS[key]}


@pytest.fixture(scope="session")
def corpus_files(tmp_path_factory):
    """entities.jsonl / sentences.jsonl / pairs.jsonl on disk."""
    root = tmp_path_factory.mktemp("corpus")
    entities = [{"id": eid, "name": name, "attrs": {}} for eid, name in NAMES.items()]
    sentences = []
    for sid, text, eid in SENTENCES:
        name = NAMES[eid]
        start = text.index(name)
        sentences.append(
            {
                "id": sid,
                "text": text,
                "mentions": [
                    {"entity_id": eid, "start": start, "end": start + len(name), "surface": name}
                ],
            }
        )
    pairs = [
        {"polarity": "positive", "a": _side("s01", "e01", "p1"), "b": _side("s06", "e01", "p2")},
        {"polarity": "positive", "a": _side("s02", "e02", "p3"), "b": _side("s07", "e02", "p4")},
        {"polarity": "positive", "a": _side("s01", "e01", "p1"), "b": _side("s02", "e02", "p3")},
        {"polarity": "positive", "a": _side("s06", "e01", "p2"), "b": _side("s07", "e02", "p4")},
        {"polarity": "negative", "a": _side("s01", "e01", "p1"), "b": _side("s03", "e03", "n1")},
        {"polarity": "negative", "a": _side("s02", "e02", "p3"), "b": _side("s09", "e04", "n2")},
        {"polarity": "negative", "a": _side("s06", "e01", "p2"), "b": _side("s05", "e05", "n3")},
    ]
    paths = {
        "entities": root / "entities.jsonl",
        "sentences": root / "sentences.jsonl",
        "pairs": root / "pairs.jsonl",
    }
    write_jsonl(paths["entities"], entities, header={"command": "ingest", "format": "entities"})
    write_jsonl(paths["sentences"], sentences, header={"command": "ingest", "format": "sentences"})
    write_jsonl(paths["pairs"], pairs, header={"command": "mine-pairs", "format": "contrastive-pairs"})
    return paths


def small_dims(**overrides):
    dims = {"dim": 32, "layers": 1, "heads": 4, "ffn": 64, "proj_dim": 16, "max_len": 32}
    dims.update(overrides)
    return dims


def masked_config(corpus_files, out, **overrides):
    cfg = {
        "entities": str(corpus_files["entities"]),
        "sentences": str(corpus_files["sentences"]),
        "out": str(out),
        **small_dims(),
        "seed": 1,
        "steps": 40,
        "batch_size": 10,
        "lr": 5e-3,
        "eta": 0.1,
        "holdout": 0.0,
    }
    cfg.update(overrides)
    return cfg


def contrastive_config(corpus_files, out, **overrides):
    cfg = {
        "pairs": str(corpus_files["pairs"]),
        "out": str(out),
        **small_dims(),
        "seed": 3,
        "steps": 40,
        "batch_size": 4,
        "lr": 5e-3,
        "tau": 0.1,
        "n_negatives": 3,
        "holdout": 0.0,
    }
    cfg.update(overrides)
    return cfg


def generator_config(corpus_files, out, **overrides):
    cfg = {
        "sentences": str(corpus_files["sentences"]),
        "out": str(out),
        **small_dims(),
        "seed": 2,
        "steps": 80,
        "batch_size": 10,
        "lr": 5e-3,
        "holdout": 0.0,
    }
    cfg.update(overrides)
    return cfg


@pytest.fixture(scope="session")
def encoder_ckpt(corpus_files, tmp_path_factory):
    from esekit_sidecar.training import train_masked_entity

    out = tmp_path_factory.mktemp("ckpt") / "encoder.pt"
    train_masked_entity(masked_config(corpus_files, out))
    return out


@pytest.fixture(scope="session")
def generator_ckpt(corpus_files, tmp_path_factory):
    from esekit_sidecar.training import pretrain_generator

    out = tmp_path_factory.mktemp("ckpt") / "generator.pt"
    pretrain_generator(generator_config(corpus_files, out))
    return out


@pytest.fixture(scope="session")
def app(encoder_ckpt, generator_ckpt):
    from esekit_sidecar.service import create_app

    return create_app(str(encoder_ckpt), str(generator_ckpt))


@pytest.fixture()
def client(app):
    from fastapi.testclient import TestClient

    with TestClient(app, raise_server_exceptions=False) as c:
        yield c
