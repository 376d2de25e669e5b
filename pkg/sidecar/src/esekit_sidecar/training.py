"""Training entry points: masked-entity, contrastive, and generator
pre-training. Each takes a YAML config (or an equivalent dict), trains a
small model deterministically on CPU, and writes a checkpoint.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass
from pathlib import Path

import torch
import yaml

from .data import MaskedSample, load_pairs, masked_samples, read_jsonl
from .errors import ConfigError, TrainingDiverged
from .losses import infonce_loss, masked_entity_loss, next_token_loss
from .models import ModelConfig, SidecarEncoder, SidecarGenerator, load_encoder, load_generator, save_checkpoint
from .vocab import BOS, DEFAULT_MASK_TOKEN, EOS, PAD, Vocab, build_vocab, tokenize

_REQUIRED = object()

MASKED_ENTITY_SCHEMA = {
    "entities": _REQUIRED,
    "sentences": _REQUIRED,
    "out": _REQUIRED,
    "mask_token": DEFAULT_MASK_TOKEN,
    "dim": 48,
    "layers": 2,
    "heads": 4,
    "ffn": 96,
    "proj_dim": 24,
    "max_len": 64,
    "seed": 0,
    "steps": 200,
    "batch_size": 8,
    "lr": 5e-3,
    "eta": 0.1,
    "holdout": 0.0,
}

CONTRASTIVE_SCHEMA = {
    "pairs": _REQUIRED,
    "out": _REQUIRED,
    "init_from": None,
    "mask_token": DEFAULT_MASK_TOKEN,
    "dim": 48,
    "layers": 2,
    "heads": 4,
    "ffn": 96,
    "proj_dim": 24,
    "max_len": 64,
    "seed": 0,
    "steps": 200,
    "batch_size": 8,
    "lr": 5e-3,
    "tau": 0.1,
    "n_negatives": 4,
    "holdout": 0.0,
}

# Conservative defaults: continued runs start from init_from with a low
# learning rate and few steps so they adapt without forgetting.
GENERATOR_SCHEMA = {
    "sentences": _REQUIRED,
    "out": _REQUIRED,
    "init_from": None,
    "mask_token": DEFAULT_MASK_TOKEN,
    "dim": 48,
    "layers": 2,
    "heads": 4,
    "ffn": 96,
    "proj_dim": 24,
    "max_len": 64,
    "seed": 0,
    "steps": 100,
    "batch_size": 8,
    "lr": 1e-3,
    "holdout": 0.0,
}


def load_config(source, schema: dict, name: str) -> dict:
    """Resolves a YAML path or dict against a schema with defaults."""
    if isinstance(source, (str, Path)):
        path = Path(source)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        raw = yaml.safe_load(path.read_text())
        if raw is None:
            raw = {}
    else:
        raw = dict(source)
    if not isinstance(raw, dict):
        raise ConfigError(f"{name} config must be a mapping")
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError(f"unknown {name} config key: {unknown[0]}")
    config = {}
    for key, default in schema.items():
        if key in raw:
            config[key] = raw[key]
        elif default is _REQUIRED:
            raise ConfigError(f"{name} config missing required key: {key}")
        else:
            config[key] = default
    if "holdout" in config and not 0.0 <= float(config["holdout"]) < 1.0:
        raise ConfigError(f"holdout fraction must be in [0, 1), got {config['holdout']}")
    if "steps" in config and (int(config["steps"]) < 1 or int(config["batch_size"]) < 1):
        raise ConfigError("steps and batch_size must be positive")
    return config


def _model_config(config: dict) -> ModelConfig:
    return ModelConfig(
        dim=int(config["dim"]),
        layers=int(config["layers"]),
        heads=int(config["heads"]),
        ffn=int(config["ffn"]),
        proj_dim=int(config["proj_dim"]),
        max_len=int(config["max_len"]),
        seed=int(config["seed"]),
    )


def _split(items: list, fraction: float, seed: int) -> tuple[list, list]:
    """Deterministic shuffle, then holdout prefix / training rest."""
    order = list(items)
    random.Random(seed).shuffle(order)
    count = int(len(order) * fraction)
    return order[count:], order[:count]


def _batch(items: list, step: int, size: int) -> list:
    start = (step * size) % len(items)
    return [items[(start + j) % len(items)] for j in range(size)]


@dataclass
class TrainResult:
    checkpoint: Path
    steps: int
    first_loss: float
    final_loss: float
    holdout_before: float | None
    holdout_after: float | None
    history: list[float]


def _check_finite(step: int, value: float):
    if not math.isfinite(value):
        raise TrainingDiverged(step, value)


# --- masked-entity objective --------------------------------------------------------


@dataclass
class MaskedRun:
    model: SidecarEncoder
    train: list[MaskedSample]
    holdout: list[MaskedSample]
    entity_index: dict[str, int]
    config: dict


def prepare_masked_run(source) -> MaskedRun:
    config = load_config(source, MASKED_ENTITY_SCHEMA, "masked-entity")
    samples, entity_ids, texts = masked_samples(
        config["entities"], config["sentences"], mask_token=config["mask_token"]
    )
    vocab = build_vocab(texts, mask_token=config["mask_token"])
    torch.manual_seed(int(config["seed"]))
    model = SidecarEncoder(vocab, entity_ids, _model_config(config))
    train, holdout = _split(samples, float(config["holdout"]), int(config["seed"]))
    if not train:
        raise ConfigError("no training samples left after the holdout split")
    index = {eid: i for i, eid in enumerate(entity_ids)}
    return MaskedRun(model=model, train=train, holdout=holdout, entity_index=index, config=config)


def masked_batch(run: MaskedRun, step: int) -> tuple[list[str], torch.Tensor]:
    picked = _batch(run.train, step, int(run.config["batch_size"]))
    texts = [s.text for s in picked]
    targets = torch.tensor([run.entity_index[s.entity_id] for s in picked], dtype=torch.long)
    return texts, targets


def _masked_loss(run: MaskedRun, texts: list[str], targets: torch.Tensor) -> torch.Tensor:
    probs = run.model.entity_probs(texts)
    return masked_entity_loss(probs, targets, eta=float(run.config["eta"]))


def _masked_holdout_loss(run: MaskedRun) -> float | None:
    if not run.holdout:
        return None
    texts = [s.text for s in run.holdout]
    targets = torch.tensor([run.entity_index[s.entity_id] for s in run.holdout], dtype=torch.long)
    with torch.no_grad():
        return float(_masked_loss(run, texts, targets))


def train_masked_entity(source) -> TrainResult:
    run = prepare_masked_run(source)
    config = run.config
    before = _masked_holdout_loss(run)
    optimizer = torch.optim.Adam(run.model.parameters(), lr=float(config["lr"]))
    history: list[float] = []
    for step in range(int(config["steps"])):
        texts, targets = masked_batch(run, step)
        loss = _masked_loss(run, texts, targets)
        value = float(loss.detach())
        _check_finite(step, value)
        history.append(value)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
    after = _masked_holdout_loss(run)
    run.model.eval()
    meta = {"objective": "masked_entity", "eta": float(config["eta"]), "steps": len(history)}
    path = save_checkpoint(config["out"], run.model, meta)
    return TrainResult(path, len(history), history[0], history[-1], before, after, history)


# --- contrastive objective ----------------------------------------------------------


@dataclass
class ContrastiveExample:
    anchor: str
    positive: str
    negatives: list[str]


@dataclass
class ContrastiveRun:
    model: SidecarEncoder
    train: list[ContrastiveExample]
    holdout: list[ContrastiveExample]
    config: dict


def prepare_contrastive_run(source) -> ContrastiveRun:
    config = load_config(source, CONTRASTIVE_SCHEMA, "contrastive")
    positives, negatives = load_pairs(config["pairs"])
    pool = sorted({p.b.text for p in negatives})
    n_negatives = int(config["n_negatives"])
    if n_negatives < 1:
        raise ConfigError("n_negatives must be positive")

    if config["init_from"]:
        model, _ = load_encoder(config["init_from"])
        model.train()
    else:
        texts = [p.a.text for p in positives + negatives] + [p.b.text for p in positives + negatives]
        vocab = build_vocab(texts, mask_token=config["mask_token"])
        sides = [p.a for p in positives + negatives] + [p.b for p in positives + negatives]
        entity_ids = sorted({side.entity_id for side in sides})
        torch.manual_seed(int(config["seed"]))
        model = SidecarEncoder(vocab, entity_ids, _model_config(config))

    rng = random.Random(int(config["seed"]))
    examples = []
    for pair in positives:
        if len(pool) >= n_negatives:
            negs = rng.sample(pool, n_negatives)
        else:
            negs = [pool[rng.randrange(len(pool))] for _ in range(n_negatives)]
        examples.append(ContrastiveExample(anchor=pair.a.text, positive=pair.b.text, negatives=negs))
    train, holdout = _split(examples, float(config["holdout"]), int(config["seed"]))
    if not train:
        raise ConfigError("no training pairs left after the holdout split")
    return ContrastiveRun(model=model, train=train, holdout=holdout, config=config)


def contrastive_batch(run: ContrastiveRun, step: int) -> list[ContrastiveExample]:
    return _batch(run.train, step, int(run.config["batch_size"]))


def _contrastive_loss(run: ContrastiveRun, batch: list[ContrastiveExample]) -> torch.Tensor:
    anchors = run.model.project_unit([e.anchor for e in batch])
    positives = run.model.project_unit([e.positive for e in batch])
    flat = [text for e in batch for text in e.negatives]
    k = len(batch[0].negatives)
    negatives = run.model.project_unit(flat).reshape(len(batch), k, -1)
    return infonce_loss(anchors, positives, negatives, tau=float(run.config["tau"]))


def _contrastive_holdout_loss(run: ContrastiveRun) -> float | None:
    if not run.holdout:
        return None
    with torch.no_grad():
        return float(_contrastive_loss(run, run.holdout))


def train_contrastive(source) -> TrainResult:
    run = prepare_contrastive_run(source)
    config = run.config
    before = _contrastive_holdout_loss(run)
    optimizer = torch.optim.Adam(run.model.parameters(), lr=float(config["lr"]))
    history: list[float] = []
    for step in range(int(config["steps"])):
        loss = _contrastive_loss(run, contrastive_batch(run, step))
        value = float(loss.detach())
        _check_finite(step, value)
        history.append(value)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
    after = _contrastive_holdout_loss(run)
    run.model.eval()
    meta = {"objective": "contrastive", "tau": float(config["tau"]), "steps": len(history)}
    path = save_checkpoint(config["out"], run.model, meta)
    return TrainResult(path, len(history), history[0], history[-1], before, after, history)


# --- generator pre-training ---------------------------------------------------------


def _sentence_texts(path) -> list[str]:
    texts = []
    for record in read_jsonl(path):
        text = record.get("text")
        if isinstance(text, str) and text.strip():
            texts.append(text)
    if not texts:
        raise ConfigError(f"no sentence texts found in {path}")
    return texts


@dataclass
class GeneratorRun:
    model: SidecarGenerator
    train: list[str]
    holdout: list[str]
    config: dict


def prepare_generator_run(source) -> GeneratorRun:
    config = load_config(source, GENERATOR_SCHEMA, "generator")
    texts = _sentence_texts(config["sentences"])
    if config["init_from"]:
        model, _ = load_generator(config["init_from"])
        model.train()
    else:
        vocab = build_vocab(texts, mask_token=config["mask_token"])
        torch.manual_seed(int(config["seed"]))
        model = SidecarGenerator(vocab, _model_config(config))
    train, holdout = _split(texts, float(config["holdout"]), int(config["seed"]))
    if not train:
        raise ConfigError("no training sentences left after the holdout split")
    return GeneratorRun(model=model, train=train, holdout=holdout, config=config)


def _generator_loss(run: GeneratorRun, texts: list[str]) -> torch.Tensor:
    vocab = run.model.vocab
    limit = run.model.config.max_len
    rows = []
    for text in texts:
        ids = [vocab.id(BOS)] + vocab.encode(text) + [vocab.id(EOS)]
        rows.append(ids[: limit + 1])
    pad = vocab.id(PAD)
    width = max(len(r) for r in rows)
    ids = torch.full((len(rows), width), pad, dtype=torch.long)
    for i, row in enumerate(rows):
        ids[i, : len(row)] = torch.tensor(row, dtype=torch.long)
    logits, _ = run.model.logits([r[:-1] for r in rows])
    return next_token_loss(logits, ids[:, 1 : logits.shape[1] + 1], pad)


def _generator_holdout_loss(run: GeneratorRun) -> float | None:
    if not run.holdout:
        return None
    with torch.no_grad():
        return float(_generator_loss(run, run.holdout))


def pretrain_generator(source) -> TrainResult:
    run = prepare_generator_run(source)
    config = run.config
    before = _generator_holdout_loss(run)
    optimizer = torch.optim.Adam(run.model.parameters(), lr=float(config["lr"]))
    history: list[float] = []
    for step in range(int(config["steps"])):
        loss = _generator_loss(run, _batch(run.train, step, int(config["batch_size"])))
        value = float(loss.detach())
        _check_finite(step, value)
        history.append(value)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
    after = _generator_holdout_loss(run)
    run.model.eval()
    meta = {"objective": "next_token", "steps": len(history), "continued_from": str(config["init_from"] or "")}
    path = save_checkpoint(config["out"], run.model, meta)
    return TrainResult(path, len(history), history[0], history[-1], before, after, history)
