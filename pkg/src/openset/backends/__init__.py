"""Clients for the four model roles: chat, text-to-image, joint image-text
embedding and image embedding.

``base`` defines the interfaces and retry policy, ``http_llm`` the real chat
adapter, ``sidecar`` the embedding-service client, and ``mocks`` fully
deterministic in-process stand-ins used by tests and offline runs.
"""

from .base import (
    Backends,
    ImageEmbedder,
    ImageTextEmbedder,
    LLMClient,
    RetryPolicy,
    TextToImageClient,
    Turn,
    call_with_retries,
)

__all__ = [
    "Backends",
    "ImageEmbedder",
    "ImageTextEmbedder",
    "LLMClient",
    "RetryPolicy",
    "TextToImageClient",
    "Turn",
    "call_with_retries",
]
