"""Abstract interfaces for the model providers plus the shared retry helper.

Each client carries a ``fingerprint`` string identifying provider + model +
relevant decode settings.  Fingerprints are baked into feature-cache keys,
so changing a provider silently is impossible: a new fingerprint simply
misses the cache and triggers recomputation.
"""

from __future__ import annotations

import time
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable, Sequence, TypeVar

from ..core import EmbeddingVector
from ..errors import BackendError

# One chat turn: ("user" | "assistant", text).  Conversations are ordered
# oldest-first and must alternate roles starting with "user".
Turn = tuple[str, str]

T = TypeVar("T")


@dataclass(frozen=True)
class RetryPolicy:
    """Exponential backoff for retryable backend errors."""

    max_attempts: int = 3
    base_delay: float = 0.5
    multiplier: float = 2.0
    max_delay: float = 8.0

    def __post_init__(self):
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        if self.base_delay < 0 or self.max_delay < 0 or self.multiplier < 1:
            raise ValueError("invalid backoff parameters")

    def delay(self, attempt: int) -> float:
        """Backoff before retry number ``attempt`` (1-based)."""
        return min(self.base_delay * self.multiplier ** (attempt - 1), self.max_delay)


def call_with_retries(
    fn: Callable[[], T],
    policy: RetryPolicy,
    sleep: Callable[[float], None] = time.sleep,
) -> T:
    """Run ``fn``, retrying on retryable :class:`BackendError`.

    Permanent errors (auth, quota, malformed payloads) propagate on the
    first attempt; retryable ones (timeouts, 5xx, 429) are retried with
    exponential backoff up to ``policy.max_attempts`` total attempts.
    """
    for attempt in range(1, policy.max_attempts + 1):
        try:
            return fn()
        except BackendError as exc:
            if not exc.retryable or attempt == policy.max_attempts:
                raise
            sleep(policy.delay(attempt))
    raise AssertionError("unreachable")


class LLMClient(ABC):
    """Conversational model: full ordered turn list in, assistant text out."""

    fingerprint: str

    @abstractmethod
    def send(self, turns: Sequence[Turn]) -> str:
        """Send a conversation and return the next assistant message."""


class TextToImageClient(ABC):
    """Text-to-image model: description in, encoded image bytes out."""

    fingerprint: str

    @abstractmethod
    def generate(self, text: str) -> tuple[bytes, str]:
        """Return ``(image bytes, format tag)``, e.g. ``(..., "png")``."""


class ImageTextEmbedder(ABC):
    """Joint image-text embedding model (text and image share one space)."""

    fingerprint: str
    dim: int | None

    @abstractmethod
    def embed_texts(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        """Embed a batch of texts, preserving order."""

    @abstractmethod
    def embed_image(self, data: bytes, fmt: str = "png") -> EmbeddingVector:
        """Embed one encoded image."""


class ImageEmbedder(ABC):
    """Image-only embedding model (separate space from the joint embedder)."""

    fingerprint: str
    dim: int | None

    @abstractmethod
    def embed_image(self, data: bytes, fmt: str = "png") -> EmbeddingVector:
        """Embed one encoded image."""


@dataclass
class Backends:
    """The four model roles the pipeline orchestrates."""

    chat: LLMClient
    imagegen: TextToImageClient
    image_text: ImageTextEmbedder
    image: ImageEmbedder
