"""Provider contracts and tokenizer configuration.

The engine names four capabilities, each a narrow protocol so pipeline
stages depend only on what they use:

- embed:                masked sentence text in, one vector per text out
- next_token_logprobs:  distribution over an allowed token set, renormalized
- score_continuation:   total logprob and token count of a continuation
- complete:             free-form completion (reasoning prompts)
- rank_similar:         order candidate names by similarity to seed names

All providers must tolerate concurrent calls; the engine never depends
on response arrival order.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence, runtime_checkable

import numpy as np

from ..errors import UsageError

DEFAULT_MASK_TOKEN = "[MASK]"

TOKENIZER_KINDS = ("character", "whitespace", "external")


@dataclass(frozen=True)
class TokenizerSpec:
    """How entity names and prompts are split into tokens.

    The mask token must never be producible by tokenizing corpus text;
    the default bracketed form is safe for ordinary prose.
    """

    kind: str = "whitespace"
    mask_token: str = DEFAULT_MASK_TOKEN

    def __post_init__(self):
        if self.kind not in TOKENIZER_KINDS:
            raise UsageError(f"unknown tokenizer kind {self.kind!r}; pick one of {TOKENIZER_KINDS}")
        if not self.mask_token:
            raise UsageError("mask token must be non-empty")

    def tokenize(self, text: str) -> list[str]:
        if self.kind == "character":
            return list(text)
        if self.kind == "whitespace":
            return text.split()
        raise UsageError("external tokenization happens provider-side; no local tokenizer")

    def detokenize(self, tokens: Sequence[str]) -> str:
        if self.kind == "character":
            return "".join(tokens)
        if self.kind == "whitespace":
            return " ".join(tokens)
        raise UsageError("external tokenization happens provider-side; no local tokenizer")


@runtime_checkable
class EmbeddingProvider(Protocol):
    mask_token: str

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]: ...


@runtime_checkable
class LanguageModelProvider(Protocol):
    def next_token_logprobs(self, prefix_tokens: Sequence[str], allowed: Sequence[str]) -> dict[str, float]: ...

    def score_continuation(self, prefix: str, continuation: str) -> tuple[float, int]: ...

    def complete(self, prompt: str, max_tokens: int) -> str: ...


@runtime_checkable
class SimilarityRanker(Protocol):
    def rank_similar(self, candidates: Sequence[str], seeds: Sequence[str], top: int) -> list[str]: ...


@dataclass
class ProviderBundle:
    """One of each capability plus the tokenizer they agree on."""

    embedder: EmbeddingProvider
    lm: LanguageModelProvider
    ranker: SimilarityRanker
    tokenizer: TokenizerSpec
