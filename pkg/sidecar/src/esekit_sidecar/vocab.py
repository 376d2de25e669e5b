"""Whitespace token vocabulary with the special tokens the models need.

The tokenizer must agree with the engine's whitespace convention and its
mask token, otherwise masked training samples and served requests would
disagree about token boundaries.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

from .errors import ConfigError

PAD = "<pad>"
UNK = "<unk>"
BOS = "<s>"
EOS = "</s>"
DEFAULT_MASK_TOKEN = "[MASK]"


def tokenize(text: str) -> list[str]:
    return text.split()


@dataclass(frozen=True)
class Vocab:
    """Token list plus index; token ids are positions in ``tokens``."""

    tokens: tuple[str, ...]
    mask_token: str = DEFAULT_MASK_TOKEN
    index: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "index", {tok: i for i, tok in enumerate(self.tokens)})
        if len(self.index) != len(self.tokens):
            raise ConfigError("vocabulary contains duplicate tokens")

    @property
    def specials(self) -> tuple[str, ...]:
        return (PAD, UNK, BOS, EOS, self.mask_token)

    def __len__(self) -> int:
        return len(self.tokens)

    def id(self, token: str) -> int:
        return self.index.get(token, self.index[UNK])

    def ids(self, tokens: Iterable[str]) -> list[int]:
        return [self.id(tok) for tok in tokens]

    def encode(self, text: str) -> list[int]:
        return self.ids(tokenize(text))


def build_vocab(texts: Iterable[str], mask_token: str = DEFAULT_MASK_TOKEN) -> Vocab:
    """Specials first (stable ids), then corpus words sorted for determinism."""
    words = sorted({tok for text in texts for tok in tokenize(text)})
    specials = [PAD, UNK, BOS, EOS, mask_token]
    ordered = specials + [w for w in words if w not in set(specials)]
    return Vocab(tokens=tuple(ordered), mask_token=mask_token)
