"""Training-free open-set object recognition.

The pipeline wires four large pretrained models together: a chat model
simulates plausible lookalike ("virtual") classes and writes scene
descriptions, a text-to-image model renders per-class galleries, a joint
image-text embedder scores text prompts and cross-assesses renders, and an
image-only embedder matches test images against the galleries.  A test
image's closed-set score is the fused softmax probability of its best
closed-set class over the expanded class list; low scores flag open-set
images.  No training, no fine-tuning, no labeled exemplars.
"""

__version__ = "0.1.0"

from .core import (
    ClassLabel,
    ClassOrigin,
    ClassRegistry,
    EmbeddingVector,
    GeneratedImage,
    ImageStatus,
    SceneDescription,
    canonicalize,
)
from .scoring import ScoringConfig, fuse_and_score, score_image, softmax

__all__ = [
    "ClassLabel",
    "ClassOrigin",
    "ClassRegistry",
    "EmbeddingVector",
    "GeneratedImage",
    "ImageStatus",
    "SceneDescription",
    "ScoringConfig",
    "canonicalize",
    "fuse_and_score",
    "score_image",
    "softmax",
    "__version__",
]
