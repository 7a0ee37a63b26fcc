"""Client for the embedding sidecar service.

The sidecar hosts the two vision models behind a small HTTP API:

- ``GET  /health``                 -> ``{"status": ..., "models": {...}}``
- ``POST /embed_text``             -> ``{"dim": d, "vectors": [[...], ...]}``
- ``POST /embed_image``            -> ``{"dim": d, "vector": [...]}``

Vectors travel unnormalized; normalization is a scoring-time decision.
``/embed_image`` takes an optional ``model`` field choosing between the
joint image-text model and the image-only model (default ``"image"``).
"""

from __future__ import annotations

import base64
import threading
import time
from typing import Callable, Sequence

import requests

from ..core import EmbeddingVector
from ..errors import MalformedResponseError, TransportError
from .base import ImageEmbedder, ImageTextEmbedder, RetryPolicy, call_with_retries
from .http_llm import _raise_for_status


class _SidecarTransport:
    """Shared HTTP session plus dim bookkeeping for both embedder facades."""

    def __init__(
        self,
        base_url: str,
        *,
        timeout: float,
        batch_size: int,
        retry: RetryPolicy,
        session: requests.Session | None,
        sleep: Callable[[float], None],
    ):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.batch_size = max(1, batch_size)
        self.retry = retry
        self._session = session or requests.Session()
        self._sleep = sleep
        self._lock = threading.Lock()
        self._dims: dict[str, int] = {}

    def _request(self, method: str, path: str, payload: dict | None = None) -> dict:
        url = self.base_url + path

        def once() -> dict:
            try:
                if method == "GET":
                    resp = self._session.get(url, timeout=self.timeout)
                else:
                    resp = self._session.post(url, json=payload, timeout=self.timeout)
            except requests.RequestException as exc:
                raise TransportError(f"request to {url} failed: {exc}") from exc
            if resp.status_code != 200:
                _raise_for_status(resp.status_code, resp.text)
            try:
                data = resp.json()
            except ValueError as exc:
                raise MalformedResponseError(f"response is not JSON: {resp.text[:200]}") from exc
            if not isinstance(data, dict):
                raise MalformedResponseError(f"expected JSON object, got: {data!r}")
            return data

        return call_with_retries(once, self.retry, sleep=self._sleep)

    def health(self) -> dict:
        return self._request("GET", "/health")

    def check_dim(self, model: str, dim: int) -> None:
        """Record the dim a model reports and reject mid-run changes."""
        with self._lock:
            known = self._dims.get(model)
            if known is None:
                self._dims[model] = dim
            elif known != dim:
                raise MalformedResponseError(
                    f"sidecar model {model!r} changed dim from {known} to {dim}"
                )

    def dim(self, model: str) -> int | None:
        with self._lock:
            return self._dims.get(model)

    def embed_text_batch(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        data = self._request("POST", "/embed_text", {"texts": list(texts)})
        try:
            dim = int(data["dim"])
            vectors = data["vectors"]
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedResponseError(f"unexpected embed_text payload: {data!r}") from exc
        if not isinstance(vectors, list) or len(vectors) != len(texts):
            raise MalformedResponseError(
                f"expected {len(texts)} vectors, got {len(vectors) if isinstance(vectors, list) else vectors!r}"
            )
        self.check_dim("image_text", dim)
        out = []
        for vec in vectors:
            ev = EmbeddingVector.wrap(vec)
            if ev.dim != dim:
                raise MalformedResponseError(f"vector dim {ev.dim} != declared {dim}")
            out.append(ev)
        return out

    def embed_image(self, data_bytes: bytes, fmt: str, model: str) -> EmbeddingVector:
        payload = {
            "image_b64": base64.b64encode(data_bytes).decode("ascii"),
            "format": fmt,
            "model": model,
        }
        data = self._request("POST", "/embed_image", payload)
        try:
            dim = int(data["dim"])
            vec = EmbeddingVector.wrap(data["vector"])
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedResponseError(f"unexpected embed_image payload: {data!r}") from exc
        if vec.dim != dim:
            raise MalformedResponseError(f"vector dim {vec.dim} != declared {dim}")
        self.check_dim(model, dim)
        return vec


class SidecarImageTextEmbedder(ImageTextEmbedder):
    def __init__(self, transport: _SidecarTransport, fingerprint: str):
        self._transport = transport
        self.fingerprint = fingerprint

    @property
    def dim(self) -> int | None:
        return self._transport.dim("image_text")

    def embed_texts(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        out: list[EmbeddingVector] = []
        step = self._transport.batch_size
        for start in range(0, len(texts), step):
            out.extend(self._transport.embed_text_batch(texts[start : start + step]))
        return out

    def embed_image(self, data: bytes, fmt: str = "png") -> EmbeddingVector:
        return self._transport.embed_image(data, fmt, "image_text")


class SidecarImageEmbedder(ImageEmbedder):
    def __init__(self, transport: _SidecarTransport, fingerprint: str):
        self._transport = transport
        self.fingerprint = fingerprint

    @property
    def dim(self) -> int | None:
        return self._transport.dim("image")

    def embed_image(self, data: bytes, fmt: str = "png") -> EmbeddingVector:
        return self._transport.embed_image(data, fmt, "image")


def embedding_sidecar_client(
    base_url: str,
    *,
    timeout: float = 60.0,
    batch_size: int = 16,
    retry: RetryPolicy = RetryPolicy(),
    session: requests.Session | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> tuple[SidecarImageTextEmbedder, SidecarImageEmbedder]:
    """Connect to a sidecar and return its two embedder facades.

    Checks ``/health`` up front and refuses to hand out clients while the
    sidecar is still loading models.  Model fingerprints reported by the
    sidecar become the cache fingerprints of the returned embedders.
    """
    transport = _SidecarTransport(
        base_url,
        timeout=timeout,
        batch_size=batch_size,
        retry=retry,
        session=session,
        sleep=sleep,
    )
    health = transport.health()
    status = health.get("status")
    if status != "ready":
        raise TransportError(f"sidecar at {base_url} is not ready (status={status!r})")
    models = health.get("models") or {}
    if "image_text" not in models or "image" not in models:
        raise MalformedResponseError(f"health payload missing model fingerprints: {health!r}")
    return (
        SidecarImageTextEmbedder(transport, fingerprint=str(models["image_text"])),
        SidecarImageEmbedder(transport, fingerprint=str(models["image"])),
    )
