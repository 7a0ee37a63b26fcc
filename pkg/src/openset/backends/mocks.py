"""Deterministic in-process stand-ins for the four model roles.

These exist so the whole pipeline can run offline, byte-reproducibly, and so
tests can engineer exact model behavior.  The scripted chat model matches
its last user turn against an ordered entry list; embedders derive vectors
from content hashes, with optional per-content overrides; the image
generator emits a tiny PNG whose pixels are a hash of the prompt.

All mocks are thread-safe and count their calls, which lets tests assert
cache hits ("zero provider calls") and per-mode embedding budgets.
"""

from __future__ import annotations

import hashlib
import json
import re
import struct
import threading
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ..core import EmbeddingVector
from ..errors import TransportError, UnmatchedPromptError
from .base import ImageEmbedder, ImageTextEmbedder, LLMClient, TextToImageClient, Turn


def _sha(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def deterministic_png(seed: str | bytes, size: tuple[int, int] = (8, 8)) -> bytes:
    """Encode a tiny RGB PNG whose pixels derive from ``seed``.

    Hand-rolled encoder (header + IHDR + IDAT + IEND with fixed zlib level)
    so the bytes depend on nothing but the seed: two runs, or two machines,
    produce identical files.
    """
    if isinstance(seed, str):
        seed = seed.encode("utf-8")
    width, height = size
    needed = width * height * 3
    stream = b""
    block = _sha(seed)
    while len(stream) < needed:
        stream += block
        block = _sha(block)
    pixels = stream[:needed]

    raw = b""
    for y in range(height):
        row = pixels[y * width * 3 : (y + 1) * width * 3]
        raw += b"\x00" + row  # filter type 0 per scanline

    def chunk(tag: bytes, payload: bytes) -> bytes:
        body = tag + payload
        return struct.pack(">I", len(payload)) + body + struct.pack(">I", zlib.crc32(body))

    ihdr = struct.pack(">IIBBBBB", width, height, 8, 2, 0, 0, 0)
    idat = zlib.compress(raw, 6)
    return (
        b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", ihdr) + chunk(b"IDAT", idat) + chunk(b"IEND", b"")
    )


# --- scripted chat model --------------------------------------------------


@dataclass
class ScriptEntry:
    """One canned response.

    ``matcher`` is tested against the last user turn: substring containment
    by default, ``re.search`` when ``regex`` is set.  Entries are tried in
    list order; a non-reusable entry is consumed by its first match.
    """

    matcher: str
    response: str
    regex: bool = False
    reusable: bool = True


class ScriptedLLM(LLMClient):
    """Chat model driven by an ordered script of matcher/response entries."""

    def __init__(
        self,
        entries: Sequence[ScriptEntry],
        *,
        strict: bool = True,
        default: str | None = None,
        fingerprint: str = "mock-chat/v1",
    ):
        self.fingerprint = fingerprint
        self._entries = list(entries)
        self._used = [False] * len(self._entries)
        self._strict = strict
        self._default = default
        self._lock = threading.Lock()
        self.calls = 0

    @classmethod
    def from_json(cls, path: Path | str, **kwargs) -> "ScriptedLLM":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        entries = [
            ScriptEntry(
                matcher=e["matcher"],
                response=e["response"],
                regex=e.get("regex", False),
                reusable=e.get("reusable", True),
            )
            for e in raw
        ]
        return cls(entries, **kwargs)

    def send(self, turns: Sequence[Turn]) -> str:
        prompt = None
        for role, text in reversed(turns):
            if role == "user":
                prompt = text
                break
        if prompt is None:
            raise UnmatchedPromptError("conversation has no user turn")
        with self._lock:
            self.calls += 1
            for i, entry in enumerate(self._entries):
                if self._used[i]:
                    continue
                hit = (
                    re.search(entry.matcher, prompt) is not None
                    if entry.regex
                    else entry.matcher in prompt
                )
                if hit:
                    if not entry.reusable:
                        self._used[i] = True
                    return entry.response
            if self._default is not None and not self._strict:
                return self._default
        raise UnmatchedPromptError(f"no script entry matches prompt: {prompt!r}")


# --- deterministic image generator -----------------------------------------


class DeterministicImageGen(TextToImageClient):
    """Maps a description to a tiny PNG via content hashing.

    ``fail_matching`` lists substrings; a prompt containing one raises a
    transport error every time, which lets tests exercise failed slots
    deterministically.
    """

    def __init__(
        self,
        *,
        fingerprint: str = "mock-imagegen/v1",
        fail_matching: Sequence[str] = (),
    ):
        self.fingerprint = fingerprint
        self._fail_matching = list(fail_matching)
        self._lock = threading.Lock()
        self.calls = 0

    def generate(self, text: str) -> tuple[bytes, str]:
        with self._lock:
            self.calls += 1
        for marker in self._fail_matching:
            if marker in text:
                raise TransportError(f"injected generation failure for prompt: {text!r}")
        return deterministic_png(f"{self.fingerprint}:{text}"), "png"


# --- hash embedders ---------------------------------------------------------


def _hash_vector(seed: str, dim: int) -> np.ndarray:
    digest = _sha(seed.encode("utf-8"))
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    return rng.standard_normal(dim).astype(np.float32)


def _as_vector(values, dim: int) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float32).reshape(-1)
    if arr.shape[0] != dim:
        raise ValueError(f"override vector has dim {arr.shape[0]}, embedder declares {dim}")
    return arr


@dataclass
class EmbedderOverrides:
    """Exact vectors for specific inputs, overriding the hash fallback.

    ``texts`` is keyed by the literal text; ``images`` by the sha256 hex
    digest of the image bytes.
    """

    texts: dict[str, list[float]] = field(default_factory=dict)
    images: dict[str, list[float]] = field(default_factory=dict)

    @classmethod
    def from_json(cls, path: Path | str) -> "EmbedderOverrides":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(texts=raw.get("texts", {}), images=raw.get("images", {}))


class MockImageTextEmbedder(ImageTextEmbedder):
    """Joint-space embedder: vectors are hashes of (fingerprint, content)."""

    def __init__(
        self,
        dim: int = 16,
        *,
        fingerprint: str = "mock-image-text/v1",
        overrides: EmbedderOverrides | None = None,
    ):
        self.dim = dim
        self.fingerprint = fingerprint
        self._overrides = overrides or EmbedderOverrides()
        self._lock = threading.Lock()
        self.text_calls = 0  # texts embedded
        self.text_batches = 0  # embed_texts invocations
        self.image_calls = 0

    def embed_texts(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        with self._lock:
            self.text_batches += 1
            self.text_calls += len(texts)
        out = []
        for text in texts:
            if text in self._overrides.texts:
                vec = _as_vector(self._overrides.texts[text], self.dim)
            else:
                vec = _hash_vector(f"{self.fingerprint}:text:{text}", self.dim)
            out.append(EmbeddingVector(values=vec))
        return out

    def embed_image(self, data: bytes, fmt: str = "png") -> EmbeddingVector:
        with self._lock:
            self.image_calls += 1
        digest = hashlib.sha256(data).hexdigest()
        if digest in self._overrides.images:
            vec = _as_vector(self._overrides.images[digest], self.dim)
        else:
            vec = _hash_vector(f"{self.fingerprint}:image:{digest}", self.dim)
        return EmbeddingVector(values=vec)


class MockImageEmbedder(ImageEmbedder):
    """Image-only embedder with its own hash namespace."""

    def __init__(
        self,
        dim: int = 16,
        *,
        fingerprint: str = "mock-image/v1",
        overrides: EmbedderOverrides | None = None,
    ):
        self.dim = dim
        self.fingerprint = fingerprint
        self._overrides = overrides or EmbedderOverrides()
        self._lock = threading.Lock()
        self.image_calls = 0

    def embed_image(self, data: bytes, fmt: str = "png") -> EmbeddingVector:
        with self._lock:
            self.image_calls += 1
        digest = hashlib.sha256(data).hexdigest()
        if digest in self._overrides.images:
            vec = _as_vector(self._overrides.images[digest], self.dim)
        else:
            vec = _hash_vector(f"{self.fingerprint}:image:{digest}", self.dim)
        return EmbeddingVector(values=vec)


def scripted_mock_llm(
    entries: Sequence[ScriptEntry] | Sequence[Mapping],
    *,
    strict: bool = True,
    default: str | None = None,
) -> ScriptedLLM:
    """Build a :class:`ScriptedLLM` from entries or plain dicts."""
    built = [
        e
        if isinstance(e, ScriptEntry)
        else ScriptEntry(
            matcher=e["matcher"],
            response=e["response"],
            regex=e.get("regex", False),
            reusable=e.get("reusable", True),
        )
        for e in entries
    ]
    return ScriptedLLM(built, strict=strict, default=default)
