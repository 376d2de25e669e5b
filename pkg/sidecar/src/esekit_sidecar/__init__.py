"""Model sidecar: small neural encoder and generator models trained on
engine artifacts and served over the provider wire protocol."""

__version__ = "0.1.0"
