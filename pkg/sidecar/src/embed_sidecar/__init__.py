"""Embedding sidecar: the two vision encoders behind a small HTTP API."""

from .config import SidecarConfig
from .service import ModelHost, create_app, serve

__all__ = ["ModelHost", "SidecarConfig", "create_app", "serve"]
