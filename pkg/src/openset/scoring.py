"""Closed-set scoring: the two recognition paths and their fusion.

A test image is scored against the expanded registry twice: once by cosine
similarity to the per-class text embeddings in the joint image-text space,
and once by mean cosine similarity to each class's generated image gallery
in the image-only space.  Both similarity vectors are scaled and passed
through a softmax over the *whole* registry (closed plus virtual classes),
then blended:

    p = alpha * p_text + (1 - alpha) * p_gallery

The closed-set score S is the maximum blended probability over the
closed-set prefix.  Virtual classes never win directly; they matter because
they absorb probability mass from spurious matches, pushing S down for
images that only superficially resemble a closed class.

All math here is float64 regardless of the float32 storage dtype.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ClassLabel, ClassRegistry, EmbeddingVector
from .errors import ScoringError


@dataclass(frozen=True)
class ScoringConfig:
    """Fusion weight, similarity scales, and normalization toggle.

    ``tau_text``/``tau_image`` play the role of the inverse softmax
    temperature (CLIP's logit scale); 100 matches the usual learned value.
    """

    alpha: float = 0.6
    tau_text: float = 100.0
    tau_image: float = 100.0
    normalize_embeddings: bool = True

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ScoringError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.tau_text <= 0 or self.tau_image <= 0:
            raise ScoringError("similarity scales must be positive")


def softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stable softmax.

    Accepts finite logits and ``-inf`` (a hard zero, used for classes with
    no gallery).  Rejects empty input, NaN, ``+inf``, and all-``-inf``.
    """
    arr = np.asarray(logits, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ScoringError(f"logits must be a non-empty 1-D array, got shape {arr.shape}")
    if np.isnan(arr).any() or np.isposinf(arr).any():
        raise ScoringError("logits must be finite or -inf")
    peak = arr.max()
    if np.isneginf(peak):
        raise ScoringError("all logits are -inf")
    exps = np.exp(arr - peak)
    return exps / exps.sum()


def _unit_rows(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    if (norms == 0).any():
        raise ScoringError("cannot normalize a zero feature vector")
    return matrix / norms


def _similarities(test: EmbeddingVector, matrix: np.ndarray, normalize: bool) -> np.ndarray:
    vec = test.values.astype(np.float64)
    mat = matrix.astype(np.float64)
    if vec.shape[0] != mat.shape[1]:
        raise ScoringError(
            f"embedding dim {vec.shape[0]} does not match feature dim {mat.shape[1]}"
        )
    if normalize:
        norm = np.linalg.norm(vec)
        if norm == 0:
            raise ScoringError("cannot normalize a zero test embedding")
        vec = vec / norm
        mat = _unit_rows(mat)
    return mat @ vec


def clip_path(
    test: EmbeddingVector,
    registry: ClassRegistry,
    store,
    cfg: ScoringConfig,
) -> np.ndarray:
    """Class probabilities from text-prompt similarity in the joint space.

    ``store`` must hold a text feature for every registry class (see
    :meth:`openset.store.FeatureStore.text_matrix`).
    """
    matrix = store.text_matrix(registry)
    sims = _similarities(test, matrix, cfg.normalize_embeddings)
    return softmax(cfg.tau_text * sims)


def dino_path(
    test: EmbeddingVector,
    registry: ClassRegistry,
    store,
    cfg: ScoringConfig,
) -> np.ndarray:
    """Class probabilities from mean gallery similarity in the image space.

    A class whose gallery came out empty contributes a ``-inf`` logit,
    i.e. exactly zero probability; if every gallery is empty there is
    nothing to score and this raises.
    """
    logits = np.full(len(registry), -np.inf, dtype=np.float64)
    any_gallery = False
    for i, label in enumerate(registry.classes):
        matrix = store.gallery_matrix(label.canonical)
        if matrix is None or matrix.shape[0] == 0:
            continue
        any_gallery = True
        sims = _similarities(test, matrix, cfg.normalize_embeddings)
        logits[i] = float(np.mean(cfg.tau_image * sims))
    if not any_gallery:
        raise ScoringError("every class gallery is empty; nothing to score against")
    return softmax(logits)


@dataclass(frozen=True, eq=False)
class ScoreBreakdown:
    """Everything scored for one test image, indexed by registry position."""

    p_clip: np.ndarray
    p_dino: np.ndarray
    p_inc: np.ndarray
    score: float
    predicted: ClassLabel

    def row(self, image_id: str) -> dict:
        """The score-table record for one image."""
        return {
            "image_id": image_id,
            "S": self.score,
            "predicted_closed_class": self.predicted.canonical,
            "p_inc": [float(x) for x in self.p_inc],
        }

    def detail(self, image_id: str) -> dict:
        """Full per-path vectors, for debugging and audits."""
        return {
            "image_id": image_id,
            "S": self.score,
            "predicted_closed_class": self.predicted.canonical,
            "p_clip": [float(x) for x in self.p_clip],
            "p_dino": [float(x) for x in self.p_dino],
            "p_inc": [float(x) for x in self.p_inc],
        }


def fuse_and_score(
    p_clip: np.ndarray,
    p_dino: np.ndarray,
    registry: ClassRegistry,
    cfg: ScoringConfig,
) -> ScoreBreakdown:
    """Blend the two paths and reduce to the closed-set score.

    At ``alpha`` exactly 0 or 1 the blended vector is the untouched input
    from the surviving path, bit for bit.
    """
    p_clip = np.asarray(p_clip, dtype=np.float64)
    p_dino = np.asarray(p_dino, dtype=np.float64)
    n = len(registry)
    if p_clip.shape != (n,) or p_dino.shape != (n,):
        raise ScoringError(
            f"probability vectors must have shape ({n},), got {p_clip.shape} and {p_dino.shape}"
        )
    for name, vec in (("text path", p_clip), ("gallery path", p_dino)):
        if abs(float(vec.sum()) - 1.0) > 1e-6:
            raise ScoringError(f"{name} probabilities sum to {vec.sum()}, not 1")
    if cfg.alpha == 1.0:
        p_inc = p_clip.copy()
    elif cfg.alpha == 0.0:
        p_inc = p_dino.copy()
    else:
        p_inc = cfg.alpha * p_clip + (1.0 - cfg.alpha) * p_dino
    closed = p_inc[: registry.closed_count]
    idx = int(np.argmax(closed))
    return ScoreBreakdown(
        p_clip=p_clip,
        p_dino=p_dino,
        p_inc=p_inc,
        score=float(closed[idx]),
        predicted=registry.classes[idx],
    )


def score_image(
    clip_embedding: EmbeddingVector,
    dino_embedding: EmbeddingVector,
    registry: ClassRegistry,
    store,
    cfg: ScoringConfig,
) -> ScoreBreakdown:
    """Score one test image given its two embeddings."""
    p_clip = clip_path(clip_embedding, registry, store, cfg)
    p_dino = dino_path(dino_embedding, registry, store, cfg)
    return fuse_and_score(p_clip, p_dino, registry, cfg)
