"""Embedding model providers.

Two families behind one duck-typed surface (``model_id``, ``fingerprint``,
``dim``, ``preprocessing``, ``embed_texts``, ``embed_image``):

- ``ProceduralEncoder``: deterministic synthetic vectors for offline
  development and tests.  No weights, no network.
- CLIP / DINOv2 encoders loaded through ``transformers`` (the ``hf``
  extra).  Inference runs in eval + inference mode with each model's
  published preprocessing, so identical inputs give identical vectors.

All vectors leave this module raw (unnormalized); the consuming engine
owns normalization policy.
"""

from __future__ import annotations

import hashlib
import io
from typing import Sequence

import numpy as np
from PIL import Image


class EncoderError(ValueError):
    """Bad input handed to an encoder, e.g. an undecodable image."""


def _decode(data: bytes) -> Image.Image:
    try:
        img = Image.open(io.BytesIO(data))
        img.load()
    except Exception as exc:  # Pillow raises a zoo of types here
        raise EncoderError(f"cannot decode image: {exc}") from exc
    return img


class ProceduralEncoder:
    """Deterministic stand-in encoder.

    Texts embed as sums of per-token hash vectors.  Images decode through
    Pillow and embed from a ``caption`` entry in their PNG text metadata
    when present (placed into the text token space, so captioned fixtures
    land near their prompt, perturbed by a pixel digest) or purely from
    the pixel digest when not.
    """

    def __init__(self, model_id: str, dim: int, namespace: str):
        if dim < 2:
            raise ValueError(f"encoder dim must be >= 2, got {dim}")
        self.model_id = model_id
        self.dim = dim
        self.namespace = namespace
        self.fingerprint = f"{namespace}:{model_id}/v1"
        self.preprocessing = "decode; RGB 8x8 bilinear pixel digest; caption tokens hashed"

    def _token_vector(self, token: str) -> np.ndarray:
        digest = hashlib.sha256(f"{self.namespace}\x00{token}".encode("utf-8")).digest()
        seed = int.from_bytes(digest[:8], "big")
        return np.random.default_rng(seed).standard_normal(self.dim).astype(np.float32)

    def _text_vector(self, text: str) -> np.ndarray:
        cleaned = "".join(c.lower() if c.isalnum() else " " for c in text)
        tokens = cleaned.split() or [f"blank:{hashlib.sha256(text.encode('utf-8')).hexdigest()}"]
        out = np.zeros(self.dim, dtype=np.float32)
        for token in tokens:
            out += self._token_vector(f"text:{token}")
        return out

    def embed_texts(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.dim), dtype=np.float32)
        return np.stack([self._text_vector(t) for t in texts])

    def embed_image(self, data: bytes) -> np.ndarray:
        img = _decode(data)
        caption = img.info.get("caption")
        small = img.convert("RGB").resize((8, 8), Image.BILINEAR)
        pixel = self._token_vector(f"pixels:{hashlib.sha256(small.tobytes()).hexdigest()}")
        if isinstance(caption, str) and caption:
            text = self._text_vector(caption)
            # small content-dependent perturbation keeps distinct images apart
            scale = 0.2 * float(np.linalg.norm(text)) / (float(np.linalg.norm(pixel)) or 1.0)
            return text + scale * pixel
        return pixel


class ClipEncoder:
    """CLIP-family joint encoder via ``transformers``; needs torch and weights."""

    def __init__(self, model_id: str, device: str = "cpu"):
        import torch
        from transformers import CLIPModel, CLIPProcessor

        self._torch = torch
        self._device = device
        self._model = CLIPModel.from_pretrained(model_id).to(device).eval()
        self._processor = CLIPProcessor.from_pretrained(model_id)
        self.model_id = model_id
        self.dim = int(self._model.config.projection_dim)
        self.fingerprint = f"clip:{model_id}"
        self.preprocessing = "CLIP processor defaults: resize, center-crop, CLIP normalization"

    def embed_texts(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.dim), dtype=np.float32)
        with self._torch.inference_mode():
            inputs = self._processor(
                text=list(texts), return_tensors="pt", padding=True, truncation=True
            ).to(self._device)
            feats = self._model.get_text_features(**inputs)
        return feats.cpu().numpy().astype(np.float32)

    def embed_image(self, data: bytes) -> np.ndarray:
        img = _decode(data).convert("RGB")
        with self._torch.inference_mode():
            inputs = self._processor(images=img, return_tensors="pt").to(self._device)
            feats = self._model.get_image_features(**inputs)
        return feats[0].cpu().numpy().astype(np.float32)


class DinoEncoder:
    """Image-only transformer encoder (DINOv2 family) via ``transformers``."""

    def __init__(self, model_id: str, device: str = "cpu"):
        import torch
        from transformers import AutoImageProcessor, AutoModel

        self._torch = torch
        self._device = device
        self._model = AutoModel.from_pretrained(model_id).to(device).eval()
        self._processor = AutoImageProcessor.from_pretrained(model_id)
        self.model_id = model_id
        self.dim = int(self._model.config.hidden_size)
        self.fingerprint = f"dino:{model_id}"
        self.preprocessing = "image processor defaults: resize, center-crop, ImageNet normalization"

    def embed_texts(self, texts: Sequence[str]) -> np.ndarray:
        raise EncoderError(f"{self.model_id} is an image-only model")

    def embed_image(self, data: bytes) -> np.ndarray:
        img = _decode(data).convert("RGB")
        with self._torch.inference_mode():
            inputs = self._processor(images=img, return_tensors="pt").to(self._device)
            out = self._model(**inputs)
        # CLS token of the last hidden state; pooler output when present
        pooled = getattr(out, "pooler_output", None)
        feats = pooled[0] if pooled is not None else out.last_hidden_state[0, 0]
        return feats.cpu().numpy().astype(np.float32)


def load_encoder(model_id: str, *, role: str, device: str = "cpu"):
    """Build the encoder for a model id; ``role`` is "image_text" or "image"."""
    if role not in ("image_text", "image"):
        raise ValueError(f"unknown encoder role {role!r}")
    if model_id.startswith("procedural:"):
        raw = model_id.split(":", 1)[1]
        try:
            dim = int(raw)
        except ValueError:
            raise ValueError(f"bad procedural id {model_id!r}: dim must be an integer") from None
        namespace = "joint" if role == "image_text" else "vision"
        return ProceduralEncoder(model_id, dim, namespace)
    if role == "image_text":
        return ClipEncoder(model_id, device)
    return DinoEncoder(model_id, device)
