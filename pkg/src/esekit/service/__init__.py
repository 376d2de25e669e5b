"""HTTP service exposing the expansion engine and the provider protocol."""
from .app import create_app

__all__ = ["create_app"]
