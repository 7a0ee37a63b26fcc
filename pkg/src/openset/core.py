"""Core domain types: class labels, the class registry, scene descriptions,
generated images and embedding carriers.

The registry is the single source of truth for class ordering.  Closed-set
classes always occupy a prefix; virtual classes proposed by the chat model
are appended after them and never reordered.  Every downstream probability
vector is indexed by registry position, so ordering bugs here would corrupt
scores silently; the invariants are enforced at construction time instead.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import RegistryError
from .ioutil import write_text_atomic


class ClassOrigin(str, Enum):
    """Where a class label came from."""

    CLOSED = "closed"
    VIRTUAL_SIMILAR = "virtual-similar"
    VIRTUAL_DISSIMILAR = "virtual-dissimilar"


def canonicalize(name: str) -> str:
    """Normalize a class name: lowercase, collapse runs of whitespace, trim.

    Idempotent: ``canonicalize(canonicalize(x)) == canonicalize(x)``.

    Raises:
        RegistryError: if nothing is left after trimming.
    """
    result = " ".join(name.split()).lower()
    if not result:
        raise RegistryError(f"class name is empty after normalization: {name!r}")
    return result


@dataclass(frozen=True)
class ClassLabel:
    """A display name plus its canonical form and origin."""

    name: str
    canonical: str
    origin: ClassOrigin

    @classmethod
    def of(cls, name: str, origin: ClassOrigin) -> "ClassLabel":
        return cls(name=" ".join(name.split()), canonical=canonicalize(name), origin=origin)

    @property
    def is_closed(self) -> bool:
        return self.origin is ClassOrigin.CLOSED

    def to_dict(self) -> dict:
        return {"name": self.name, "canonical": self.canonical, "origin": self.origin.value}

    @classmethod
    def from_dict(cls, d: dict) -> "ClassLabel":
        label = cls(name=d["name"], canonical=d["canonical"], origin=ClassOrigin(d["origin"]))
        if canonicalize(label.name) != label.canonical:
            raise RegistryError(
                f"canonical form {label.canonical!r} does not match name {label.name!r}"
            )
        return label


@dataclass(frozen=True)
class ClassRegistry:
    """Ordered, duplicate-free list of classes with closed-set prefix.

    Immutable: :meth:`append` returns a new registry.  Equality of two
    registries is positional (same labels in the same order).
    """

    classes: tuple[ClassLabel, ...]

    def __post_init__(self):
        seen: set[str] = set()
        past_closed = False
        for label in self.classes:
            if label.canonical in seen:
                raise RegistryError(f"duplicate canonical name: {label.canonical!r}")
            seen.add(label.canonical)
            if label.is_closed and past_closed:
                raise RegistryError("closed classes must form a contiguous prefix")
            if not label.is_closed:
                past_closed = True
        if not self.classes or not self.classes[0].is_closed:
            raise RegistryError("registry needs at least one closed class")

    @classmethod
    def from_closed(cls, names: Iterable[str]) -> "ClassRegistry":
        labels = tuple(ClassLabel.of(n, ClassOrigin.CLOSED) for n in names)
        return cls(classes=labels)

    @property
    def closed_count(self) -> int:
        return sum(1 for c in self.classes if c.is_closed)

    def __len__(self) -> int:
        return len(self.classes)

    def names(self) -> list[str]:
        return [c.name for c in self.classes]

    def canonicals(self) -> list[str]:
        return [c.canonical for c in self.classes]

    def __contains__(self, canonical: str) -> bool:
        return any(c.canonical == canonical for c in self.classes)

    def index_of(self, canonical: str) -> int:
        for i, c in enumerate(self.classes):
            if c.canonical == canonical:
                return i
        raise RegistryError(f"class not in registry: {canonical!r}")

    def append(self, candidates: Sequence[ClassLabel]) -> tuple["ClassRegistry", list[str]]:
        """Append virtual classes, rejecting duplicates.

        Candidates whose canonical form already exists (in the registry or
        earlier in the same batch) are skipped and reported back by display
        name.  Acceptance order is preserved.  Closed-set candidates are a
        caller bug and raise.

        Returns:
            (new registry, list of rejected display names)
        """
        for cand in candidates:
            if cand.is_closed:
                raise RegistryError(f"cannot append closed class {cand.name!r}")
        accepted: list[ClassLabel] = []
        rejects: list[str] = []
        seen = set(self.canonicals())
        for cand in candidates:
            if cand.canonical in seen:
                rejects.append(cand.name)
                continue
            seen.add(cand.canonical)
            accepted.append(cand)
        if not accepted:
            return self, rejects
        return ClassRegistry(classes=self.classes + tuple(accepted)), rejects

    def closed_labels(self) -> tuple[ClassLabel, ...]:
        return self.classes[: self.closed_count]

    # --- persistence -----------------------------------------------------

    def to_json(self) -> str:
        return json.dumps([c.to_dict() for c in self.classes], indent=2, ensure_ascii=False) + "\n"

    def save(self, path: Path | str) -> None:
        write_text_atomic(path, self.to_json())

    @classmethod
    def from_json(cls, text: str) -> "ClassRegistry":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise RegistryError(f"registry file is not valid JSON: {exc}") from exc
        if not isinstance(raw, list):
            raise RegistryError("registry JSON must be an array of class records")
        return cls(classes=tuple(ClassLabel.from_dict(d) for d in raw))

    @classmethod
    def load(cls, path: Path | str) -> "ClassRegistry":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class SceneDescription:
    """One scene description for a class; ``index_k`` is the 1-based slot."""

    label: ClassLabel
    index_k: int
    text: str
    revision: int = 0

    def __post_init__(self):
        if self.index_k < 1:
            raise ValueError("index_k is 1-based")
        if self.revision < 0:
            raise ValueError("revision must be >= 0")
        if not self.text.strip():
            raise ValueError("description text is empty")

    def refined(self, text: str) -> "SceneDescription":
        return replace(self, text=text, revision=self.revision + 1)


class ImageStatus(str, Enum):
    PENDING = "pending"
    ACCEPTED = "accepted"
    DISCARDED = "discarded"


@dataclass(frozen=True)
class GeneratedImage:
    """Raw image bytes plus the description that produced them."""

    data: bytes
    format: str
    source: SceneDescription
    status: ImageStatus = ImageStatus.PENDING

    def accepted(self) -> "GeneratedImage":
        return replace(self, status=ImageStatus.ACCEPTED)

    def discarded(self) -> "GeneratedImage":
        return replace(self, status=ImageStatus.DISCARDED)


@dataclass(frozen=True, eq=False)
class EmbeddingVector:
    """1-D float32 vector with an explicit "already normalized" flag.

    Providers return raw vectors over the wire; scoring decides whether to
    normalize.  ``unit()`` returns an L2-normalized copy.
    """

    values: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        if self.values.ndim != 1:
            raise ValueError(f"embedding must be 1-D, got shape {self.values.shape}")
        if self.normalized:
            norm = float(np.linalg.norm(self.values))
            if abs(norm - 1.0) > 1e-5:
                raise ValueError(f"vector flagged normalized has L2 norm {norm}")

    @classmethod
    def wrap(cls, values, *, normalized: bool = False) -> "EmbeddingVector":
        arr = np.asarray(values, dtype=np.float32).reshape(-1)
        return cls(values=arr, normalized=normalized)

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    def unit(self) -> "EmbeddingVector":
        if self.normalized:
            return self
        norm = float(np.linalg.norm(self.values))
        if norm == 0.0:
            raise ValueError("cannot normalize a zero vector")
        return EmbeddingVector(values=(self.values / norm).astype(np.float32), normalized=True)
