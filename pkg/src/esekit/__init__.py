"""Entity set expansion with negative seed entities.

Two pipelines over an attribute-annotated corpus: a retrieval pipeline
(embedding similarity + segmented re-ranking) and a generative pipeline
(prefix-trie constrained beam search), scored with positive/negative/
combined rank metrics.
"""

__version__ = "0.1.0"
