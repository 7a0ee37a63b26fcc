"""HTTP service exposing the two encoders behind the engine's wire protocol.

- ``GET  /health``      -> ``{"status": "loading"|"ready"|"error", "models": {...}}``
- ``POST /embed_text``  -> ``{"dim": d, "vectors": [[f32], ...]}``
- ``POST /embed_image`` -> ``{"dim": d, "vector": [f32]}``
- ``GET  /info``        -> model ids, dims, preprocessing descriptions

``/embed_image`` routes on an optional ``model`` field ("image" by
default, "image_text" for the joint space).  Vectors travel raw; the
consuming engine owns normalization.  Batches above the configured
maximum are refused with 413.  Requests may arrive concurrently, but
model inference is serialized behind a lock with internal micro-batching,
so callers only ever see the request/response contract.
"""

from __future__ import annotations

import base64
import binascii
import threading
from contextlib import asynccontextmanager

import numpy as np
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from .config import SidecarConfig
from .providers import EncoderError, load_encoder

_MICRO_BATCH = 16  # inference chunk size inside one request


class ModelHost:
    """Owns encoder lifecycle and serialized inference.

    ``status`` moves from "loading" to "ready" only once both encoders are
    up; any load failure parks it at "error" with the message preserved, and
    the embed endpoints refuse to serve.
    """

    def __init__(self, config: SidecarConfig):
        self.config = config
        self.status = "loading"
        self.error: str | None = None
        self.encoders: dict[str, object] = {}
        self._lock = threading.Lock()

    def load(self) -> None:
        try:
            self.encoders = {
                "image_text": load_encoder(
                    self.config.image_text_model, role="image_text", device=self.config.device
                ),
                "image": load_encoder(
                    self.config.image_model, role="image", device=self.config.device
                ),
            }
        except Exception as exc:  # any load failure must surface as not-ready
            self.status = "error"
            self.error = str(exc)
            return
        self.status = "ready"

    def encoder(self, model: str):
        enc = self.encoders.get(model)
        if enc is None:
            raise HTTPException(400, f"unknown model {model!r}; expected 'image' or 'image_text'")
        return enc

    def embed_texts(self, texts: list[str]) -> np.ndarray:
        enc = self.encoder("image_text")
        chunks = []
        with self._lock:
            for start in range(0, len(texts), _MICRO_BATCH):
                chunks.append(enc.embed_texts(texts[start : start + _MICRO_BATCH]))
        if not chunks:
            return np.zeros((0, enc.dim), dtype=np.float32)
        return np.vstack(chunks)

    def embed_image(self, data: bytes, model: str) -> np.ndarray:
        enc = self.encoder(model)
        with self._lock:
            return enc.embed_image(data)


class EmbedTextRequest(BaseModel):
    texts: list[str]


class EmbedImageRequest(BaseModel):
    image_b64: str
    format: str = "png"
    model: str = "image"


def create_app(config: SidecarConfig | None = None, host: ModelHost | None = None) -> FastAPI:
    """Build the FastAPI app; models load on startup (lifespan)."""
    config = config or SidecarConfig()
    host = host or ModelHost(config)

    @asynccontextmanager
    async def lifespan(_app: FastAPI):
        host.load()
        yield

    app = FastAPI(title="embedding sidecar", lifespan=lifespan)
    app.state.host = host

    def require_ready() -> None:
        if host.status != "ready":
            raise HTTPException(503, f"models not ready (status={host.status})")

    @app.get("/health")
    def health() -> dict:
        doc: dict = {"status": host.status}
        if host.status == "ready":
            doc["models"] = {name: enc.fingerprint for name, enc in host.encoders.items()}
        if host.error:
            doc["error"] = host.error
        return doc

    @app.post("/embed_text")
    def embed_text(req: EmbedTextRequest) -> dict:
        require_ready()
        if len(req.texts) > config.max_batch:
            raise HTTPException(
                413, f"batch of {len(req.texts)} exceeds max_batch={config.max_batch}"
            )
        vectors = host.embed_texts(req.texts)
        return {
            "dim": host.encoder("image_text").dim,
            "vectors": [[float(x) for x in row] for row in vectors],
        }

    @app.post("/embed_image")
    def embed_image(req: EmbedImageRequest) -> dict:
        require_ready()
        try:
            data = base64.b64decode(req.image_b64, validate=True)
        except (binascii.Error, ValueError) as exc:
            raise HTTPException(400, f"image_b64 is not valid base64: {exc}") from exc
        enc = host.encoder(req.model)
        try:
            vector = host.embed_image(data, req.model)
        except EncoderError as exc:
            raise HTTPException(400, str(exc)) from exc
        return {"dim": enc.dim, "vector": [float(x) for x in vector]}

    @app.get("/info")
    def info() -> dict:
        require_ready()
        return {
            "max_batch": config.max_batch,
            "models": {
                name: {
                    "id": enc.model_id,
                    "fingerprint": enc.fingerprint,
                    "dim": enc.dim,
                    "preprocessing": enc.preprocessing,
                }
                for name, enc in host.encoders.items()
            },
        }

    return app


def serve(config: SidecarConfig) -> None:
    """Blocking entry point: load both models and serve until interrupted."""
    import uvicorn

    uvicorn.run(create_app(config), host=config.host, port=config.port, log_level="info")
