"""Content-addressed cache of embedding vectors.

Every vector is keyed by a hash of (provider fingerprint, payload kind,
payload bytes), so a cache hit is only possible when both the input and the
model that would embed it are unchanged.  Vectors are stored raw, exactly
as the provider returned them; normalization happens at scoring time, which
keeps one cache valid across scoring configs.

On disk a store is two files: ``manifest.json`` (entries with offsets, the
text/gallery indexes, provider fingerprints) and ``vectors.bin`` (the
concatenated little-endian float32 payloads).  Round-trips are bit-exact.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .backends.base import ImageEmbedder, ImageTextEmbedder
from .core import ClassRegistry, EmbeddingVector
from .errors import StoreError
from .ioutil import write_bytes_atomic, write_json_atomic

MANIFEST_NAME = "manifest.json"
VECTORS_NAME = "vectors.bin"

PROMPT_PREFIX = "a photo of "


def build_class_prompts(registry: ClassRegistry) -> list[str]:
    """The text prompt embedded for each class, in registry order."""
    return [PROMPT_PREFIX + label.name for label in registry.classes]


def content_key(fingerprint: str, kind: str, payload: bytes) -> str:
    """Cache key for one embedding: hash of provider identity + content."""
    h = hashlib.sha256()
    h.update(fingerprint.encode("utf-8"))
    h.update(b"\x00")
    h.update(kind.encode("ascii"))
    h.update(b"\x00")
    h.update(payload)
    return h.hexdigest()


class FeatureStore:
    """In-memory feature store with optional directory persistence.

    Create with a root directory to load an existing store (if present)
    and enable :meth:`save`; create with ``root=None`` for a transient
    store.
    """

    def __init__(self, root: Path | str | None = None):
        self.root = Path(root) if root is not None else None
        self._entries: dict[str, dict] = {}
        self._blob = bytearray()
        self._text_index: dict[str, str] = {}
        self._gallery_index: dict[str, list[str]] = {}
        self.fingerprints: dict[str, str] = {}
        if self.root is not None and (self.root / MANIFEST_NAME).exists():
            self._load(self.root)

    def _load(self, root: Path) -> None:
        try:
            manifest = json.loads((root / MANIFEST_NAME).read_text(encoding="utf-8"))
            blob = (root / VECTORS_NAME).read_bytes()
        except (OSError, json.JSONDecodeError) as exc:
            raise StoreError(f"cannot load feature store at {root}: {exc}") from exc
        entries = manifest.get("entries", {})
        for key, entry in entries.items():
            end = entry["offset"] + entry["length"]
            if end > len(blob):
                raise StoreError(f"entry {key} extends past vectors.bin ({end} > {len(blob)})")
        self._entries = entries
        self._blob = bytearray(blob)
        self._text_index = manifest.get("text_index", {})
        self._gallery_index = manifest.get("gallery_index", {})
        self.fingerprints = manifest.get("fingerprints", {})

    # --- raw entry access --------------------------------------------------

    def __contains__(self, key: str) -> bool:
        return key in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def vector(self, key: str) -> np.ndarray:
        entry = self._entries.get(key)
        if entry is None:
            raise StoreError(f"no vector for key {key}")
        start, length = entry["offset"], entry["length"]
        return np.frombuffer(bytes(self._blob[start : start + length]), dtype="<f4").copy()

    def _put(self, key: str, vec: EmbeddingVector, fingerprint: str) -> None:
        if key in self._entries:
            return
        data = vec.values.astype("<f4").tobytes()
        self._entries[key] = {
            "offset": len(self._blob),
            "length": len(data),
            "dim": vec.dim,
            "fingerprint": fingerprint,
        }
        self._blob.extend(data)

    # --- precompute --------------------------------------------------------

    def precompute_text_features(
        self,
        registry: ClassRegistry,
        embedder: ImageTextEmbedder,
        *,
        batch_size: int = 32,
    ) -> int:
        """Embed each class prompt, reusing cached vectors.

        Rebuilds the canonical-name index for the given registry and
        returns how many prompts actually hit the provider.
        """
        prompts = build_class_prompts(registry)
        keys = [content_key(embedder.fingerprint, "text", p.encode("utf-8")) for p in prompts]
        missing = [(i, prompts[i]) for i, key in enumerate(keys) if key not in self._entries]
        for start in range(0, len(missing), max(1, batch_size)):
            chunk = missing[start : start + max(1, batch_size)]
            vectors = embedder.embed_texts([p for _, p in chunk])
            if len(vectors) != len(chunk):
                raise StoreError(
                    f"embedder returned {len(vectors)} vectors for {len(chunk)} prompts"
                )
            for (i, _), vec in zip(chunk, vectors):
                self._put(keys[i], vec, embedder.fingerprint)
        self._text_index = {
            label.canonical: keys[i] for i, label in enumerate(registry.classes)
        }
        self.fingerprints["image_text"] = embedder.fingerprint
        return len(missing)

    def precompute_gallery_features(
        self,
        galleries: Sequence,
        embedder: ImageEmbedder,
    ) -> int:
        """Embed every accepted gallery image, reusing cached vectors.

        ``galleries`` is a sequence of :class:`openset.gallery.ClassGallery`.
        Classes whose gallery is empty get no index entry at all.  Returns
        the number of provider calls made.
        """
        calls = 0
        index: dict[str, list[str]] = {}
        for gallery in galleries:
            keys: list[str] = []
            for image in gallery.images:
                key = content_key(embedder.fingerprint, "image", image.data)
                if key not in self._entries:
                    vec = embedder.embed_image(image.data, image.format)
                    self._put(key, vec, embedder.fingerprint)
                    calls += 1
                keys.append(key)
            if keys:
                index[gallery.label.canonical] = keys
        self._gallery_index.update(index)
        self.fingerprints["image"] = embedder.fingerprint
        return calls

    # --- typed lookups -----------------------------------------------------

    def text_feature(self, canonical: str) -> np.ndarray:
        key = self._text_index.get(canonical)
        if key is None:
            raise StoreError(f"no text feature for class {canonical!r}")
        return self.vector(key)

    def text_matrix(self, registry: ClassRegistry) -> np.ndarray:
        """Per-class text features stacked in registry order, shape (n, d)."""
        rows = [self.text_feature(label.canonical) for label in registry.classes]
        dims = {r.shape[0] for r in rows}
        if len(dims) > 1:
            raise StoreError(f"text features have mixed dims: {sorted(dims)}")
        return np.stack(rows)

    def gallery_matrix(self, canonical: str) -> np.ndarray | None:
        """Stacked gallery features for one class, or None if it has none."""
        keys = self._gallery_index.get(canonical)
        if not keys:
            return None
        return np.stack([self.vector(k) for k in keys])

    # --- persistence ---------------------------------------------------------

    def manifest(self) -> dict:
        return {
            "entries": self._entries,
            "fingerprints": self.fingerprints,
            "text_index": self._text_index,
            "gallery_index": self._gallery_index,
        }

    def save(self, root: Path | str | None = None) -> Path:
        target = Path(root) if root is not None else self.root
        if target is None:
            raise StoreError("no directory to save to; pass root=")
        target.mkdir(parents=True, exist_ok=True)
        write_bytes_atomic(target / VECTORS_NAME, bytes(self._blob))
        write_json_atomic(target / MANIFEST_NAME, self.manifest(), sort_keys=True)
        return target
