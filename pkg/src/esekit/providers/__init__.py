"""Provider contracts, deterministic stubs, and the remote client."""
from .base import (
    EmbeddingProvider,
    LanguageModelProvider,
    ProviderBundle,
    SimilarityRanker,
    TokenizerSpec,
)
from .conformance import ConformanceResult, assert_conformant, run_conformance
from .remote import AsgiSyncTransport, ProviderEndpoint, RemoteProvider
from .stubs import (
    CannedRanker,
    EmbeddingSimilarityRanker,
    HashingEmbedder,
    NameEmbeddingRanker,
    NgramLM,
    TableLM,
    stub_bundle,
)

__all__ = [
    "AsgiSyncTransport",
    "CannedRanker",
    "ConformanceResult",
    "assert_conformant",
    "EmbeddingProvider",
    "EmbeddingSimilarityRanker",
    "HashingEmbedder",
    "LanguageModelProvider",
    "NameEmbeddingRanker",
    "NgramLM",
    "ProviderBundle",
    "ProviderEndpoint",
    "RemoteProvider",
    "SimilarityRanker",
    "TableLM",
    "TokenizerSpec",
    "run_conformance",
    "stub_bundle",
]
