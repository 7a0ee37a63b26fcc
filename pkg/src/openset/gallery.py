"""Per-class image galleries: describe, generate, cross-assess, refine.

For each registry class the chat model writes K scene descriptions, the
image generator renders each one, and the joint embedder judges every
render: softmax over cosine similarity to all class text features.  If the
image's own class wins the argmax (ties count as a win) the image is
accepted; otherwise the description is refined against the confusing class
and the slot is regenerated and reassessed, up to a fixed number of
assessments, after which the slot is discarded.

Modes:

- ``full``                     refine against the confusing class
- ``no-cross-assess``          accept every render unchecked
- ``check-and-discard``        assess once, never refine
- ``check-and-naive-refine``   refine without naming the confusing class

Every slot ends accepted, discarded, or failed (generation error), so the
three counts always sum to K.
"""

from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .backends.base import ImageTextEmbedder, LLMClient, TextToImageClient
from .core import ClassLabel, ClassRegistry, GeneratedImage, ImageStatus, SceneDescription
from .errors import BackendError, DescriptionShortfallError, GalleryError
from .ioutil import write_bytes_atomic, write_json_atomic
from .prompts import PromptId, PromptTemplate, load_templates
from .scoring import ScoringConfig, softmax, _similarities
from .simulate import ChatTranscript
from .store import FeatureStore

log = logging.getLogger(__name__)

_NUMBERED = re.compile(r"^\s*(\d+)[.)]\s+(.*)$")


class GalleryMode(str, Enum):
    FULL = "full"
    NO_CROSS_ASSESS = "no-cross-assess"
    CHECK_AND_DISCARD = "check-and-discard"
    CHECK_AND_NAIVE_REFINE = "check-and-naive-refine"


@dataclass
class GalleryConfig:
    """Gallery size, assessment budget, and operating mode."""

    k: int = 10
    max_crossassess_cycles: int = 3
    mode: GalleryMode = GalleryMode.FULL

    def __post_init__(self):
        if isinstance(self.mode, str) and not isinstance(self.mode, GalleryMode):
            self.mode = GalleryMode(self.mode)
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.max_crossassess_cycles < 1:
            raise ValueError("max_crossassess_cycles must be >= 1")


class Verdict(str, Enum):
    ACCURATE = "accurate"
    LESS_ACCURATE = "less-accurate"


@dataclass(frozen=True, eq=False)
class AssessmentResult:
    """Outcome of judging one generated image against all class prompts."""

    p_assess: np.ndarray
    argmax_class: ClassLabel
    verdict: Verdict
    confused: ClassLabel | None

    def __post_init__(self):
        if self.verdict is Verdict.LESS_ACCURATE and self.confused is None:
            raise ValueError("less-accurate verdict must name the confusing class")
        if self.verdict is Verdict.ACCURATE and self.confused is not None:
            raise ValueError("accurate verdict cannot name a confusing class")


@dataclass
class SlotRecord:
    """Audit trail for one of the K description slots."""

    index_k: int
    descriptions: list[str]
    status: str  # "accepted" | "discarded" | "failed"
    assessments: int
    image: GeneratedImage | None

    @property
    def revision(self) -> int:
        return len(self.descriptions) - 1


@dataclass
class ClassGallery:
    """Accepted images for one class plus the full slot audit trail."""

    label: ClassLabel
    images: list[GeneratedImage]
    slots: list[SlotRecord] = field(default_factory=list)

    @property
    def accepted_count(self) -> int:
        return len(self.images)

    @property
    def discarded_count(self) -> int:
        return sum(1 for s in self.slots if s.status == "discarded")

    @property
    def failed_count(self) -> int:
        return sum(1 for s in self.slots if s.status == "failed")

    @property
    def is_empty(self) -> bool:
        return not self.images


def _parse_numbered_list(text: str) -> list[str]:
    """Extract numbered items; unnumbered lines continue the previous item."""
    items: list[str] = []
    for line in text.splitlines():
        m = _NUMBERED.match(line)
        if m:
            items.append(m.group(2).strip())
        elif items and line.strip():
            items[-1] = f"{items[-1]} {line.strip()}"
    return [item for item in items if item]


def generate_descriptions(
    label: ClassLabel,
    k: int,
    chat: LLMClient,
    templates: dict[PromptId, PromptTemplate] | None = None,
    transcripts: list[ChatTranscript] | None = None,
) -> list[SceneDescription]:
    """Ask the chat model for K scene descriptions of one class.

    If the first answer comes back short, a follow-up in the same
    conversation asks for the remainder once; still short after that is an
    error.  Surplus items beyond K are dropped.
    """
    templates = templates or load_templates()
    template = templates[PromptId.DESCRIPTIONS]
    transcript = ChatTranscript(class_scope=label.canonical, round_index=1)

    def ask(count: int) -> list[str]:
        prompt = template.render({"K": count, "class": label.name})
        transcript.add("user", prompt)
        try:
            answer = chat.send(list(transcript.turns))
        except BackendError as exc:
            raise GalleryError(f"description request failed for {label.name!r}: {exc}") from exc
        transcript.add("assistant", answer)
        return _parse_numbered_list(answer)

    texts = ask(k)[:k]
    if len(texts) < k:
        texts.extend(ask(k - len(texts))[: k - len(texts)])
    if transcripts is not None:
        transcripts.append(transcript)
    if len(texts) < k:
        raise DescriptionShortfallError(label.name, got=len(texts), want=k)
    return [
        SceneDescription(label=label, index_k=i + 1, text=text)
        for i, text in enumerate(texts)
    ]


def generate_image(desc: SceneDescription, gen: TextToImageClient) -> GeneratedImage:
    """Render one description.  The result starts out pending."""
    data, fmt = gen.generate(desc.text)
    if not data:
        raise GalleryError(f"generator returned empty image for {desc.label.name!r}")
    return GeneratedImage(data=data, format=fmt, source=desc, status=ImageStatus.PENDING)


def assess_image(
    image: GeneratedImage,
    registry: ClassRegistry,
    store: FeatureStore,
    embedder: ImageTextEmbedder,
    cfg: ScoringConfig,
) -> AssessmentResult:
    """Judge whether a render actually depicts its own class.

    The image is embedded in the joint space and softmaxed against every
    class text feature.  The desired class must win the argmax; an exact
    tie with the top probability counts as a win, so a maximally ambiguous
    render is not punished.
    """
    desired = image.source.label
    test = embedder.embed_image(image.data, image.format)
    sims = _similarities(test, store.text_matrix(registry), cfg.normalize_embeddings)
    p = softmax(cfg.tau_text * sims)
    desired_idx = registry.index_of(desired.canonical)
    top_idx = int(np.argmax(p))
    if p[desired_idx] == p[top_idx]:
        return AssessmentResult(
            p_assess=p, argmax_class=desired, verdict=Verdict.ACCURATE, confused=None
        )
    confused = registry.classes[top_idx]
    return AssessmentResult(
        p_assess=p, argmax_class=confused, verdict=Verdict.LESS_ACCURATE, confused=confused
    )


def refine_description(
    desc: SceneDescription,
    confused: ClassLabel | None,
    chat: LLMClient,
    templates: dict[PromptId, PromptTemplate] | None = None,
    *,
    naive: bool = False,
    transcripts: list[ChatTranscript] | None = None,
) -> SceneDescription:
    """Rewrite a description that rendered into the wrong class.

    The full prompt names the class the render was confused with; the
    naive variant only restates the desired class.  Returns the same slot
    with the revision bumped.
    """
    templates = templates or load_templates()
    if naive:
        prompt = templates[PromptId.NAIVE_REFINE].render(
            {"desc": desc.text, "target": desc.label.name}
        )
    else:
        if confused is None:
            raise GalleryError("refinement needs the confusing class")
        if confused.canonical == desc.label.canonical:
            raise GalleryError("cannot refine against the description's own class")
        prompt = templates[PromptId.REFINE].render(
            {"desc": desc.text, "confused": confused.name, "target": desc.label.name}
        )
    transcript = ChatTranscript(class_scope=desc.label.canonical, round_index=desc.revision + 1)
    transcript.add("user", prompt)
    try:
        answer = chat.send(list(transcript.turns))
    except BackendError as exc:
        raise GalleryError(f"refinement failed for {desc.label.name!r}: {exc}") from exc
    transcript.add("assistant", answer)
    if transcripts is not None:
        transcripts.append(transcript)
    text = answer.strip().strip('"').strip()
    if not text:
        raise GalleryError(f"refinement for {desc.label.name!r} came back empty")
    return desc.refined(text)


def build_gallery(
    label: ClassLabel,
    registry: ClassRegistry,
    store: FeatureStore,
    chat: LLMClient,
    gen: TextToImageClient,
    embedder: ImageTextEmbedder,
    cfg: GalleryConfig,
    scoring_cfg: ScoringConfig,
    templates: dict[PromptId, PromptTemplate] | None = None,
) -> ClassGallery:
    """Build the image gallery for one class.

    Every slot is driven to a terminal state; a generation failure marks
    the slot failed and moves on.  An all-discarded/failed class yields an
    empty gallery (logged as a warning), which scoring treats as a hard
    zero rather than an error.
    """
    templates = templates or load_templates()
    descriptions = generate_descriptions(label, cfg.k, chat, templates)
    images: list[GeneratedImage] = []
    slots: list[SlotRecord] = []

    for desc in descriptions:
        record = SlotRecord(
            index_k=desc.index_k,
            descriptions=[desc.text],
            status="failed",
            assessments=0,
            image=None,
        )
        slots.append(record)
        try:
            image = generate_image(desc, gen)
        except BackendError:
            log.warning("generation failed for %s slot %d", label.name, desc.index_k)
            continue

        if cfg.mode is GalleryMode.NO_CROSS_ASSESS:
            record.image = image.accepted()
            record.status = "accepted"
            images.append(record.image)
            continue

        while True:
            result = assess_image(image, registry, store, embedder, scoring_cfg)
            record.assessments += 1
            if result.verdict is Verdict.ACCURATE:
                record.image = image.accepted()
                record.status = "accepted"
                images.append(record.image)
                break
            if (
                cfg.mode is GalleryMode.CHECK_AND_DISCARD
                or record.assessments >= cfg.max_crossassess_cycles
            ):
                record.image = image.discarded()
                record.status = "discarded"
                break
            desc = refine_description(
                desc,
                result.confused,
                chat,
                templates,
                naive=cfg.mode is GalleryMode.CHECK_AND_NAIVE_REFINE,
            )
            record.descriptions.append(desc.text)
            try:
                image = generate_image(desc, gen)
            except BackendError:
                log.warning(
                    "regeneration failed for %s slot %d rev %d",
                    label.name,
                    desc.index_k,
                    desc.revision,
                )
                record.image = None
                record.status = "failed"
                break

    gallery = ClassGallery(label=label, images=images, slots=slots)
    if gallery.is_empty:
        log.warning("gallery for %s is empty (%d slots discarded/failed)", label.name, cfg.k)
    return gallery


def build_all_galleries(
    registry: ClassRegistry,
    store: FeatureStore,
    chat: LLMClient,
    gen: TextToImageClient,
    embedder: ImageTextEmbedder,
    cfg: GalleryConfig,
    scoring_cfg: ScoringConfig,
    templates: dict[PromptId, PromptTemplate] | None = None,
    *,
    parallelism: int = 4,
) -> list[ClassGallery]:
    """Build galleries for every registry class, returned in registry order."""
    templates = templates or load_templates()

    def run_one(label: ClassLabel) -> ClassGallery:
        return build_gallery(
            label, registry, store, chat, gen, embedder, cfg, scoring_cfg, templates
        )

    with ThreadPoolExecutor(max_workers=max(1, parallelism)) as pool:
        futures = [pool.submit(run_one, label) for label in registry.classes]
        galleries = []
        for label, future in zip(registry.classes, futures):
            try:
                galleries.append(future.result())
            except BackendError as exc:
                raise GalleryError(f"gallery build failed for {label.name!r}: {exc}") from exc
    return galleries


# --- persistence ------------------------------------------------------------

MANIFEST_NAME = "gallery_manifest.json"
IMAGE_DIR = "gallery"


def _image_relpath(canonical: str, index_k: int, revision: int, fmt: str) -> str:
    return f"{IMAGE_DIR}/{canonical}/{index_k}_{revision}.{fmt}"


def write_gallery_tree(galleries: Sequence[ClassGallery], root: Path | str) -> dict:
    """Persist galleries under ``root``: image files plus a JSON manifest.

    The manifest lists classes in the order given (registry order) with the
    full description history and terminal status of every slot.  The final
    render of each non-failed slot is written next to it; failed slots have
    no file.  Returns the manifest dict.
    """
    root = Path(root)
    manifest_classes = []
    for gallery in galleries:
        slots = []
        for slot in gallery.slots:
            path = None
            if slot.image is not None:
                path = _image_relpath(
                    gallery.label.canonical, slot.index_k, slot.revision, slot.image.format
                )
                write_bytes_atomic(root / path, slot.image.data)
            slots.append(
                {
                    "k": slot.index_k,
                    "status": slot.status,
                    "assessments": slot.assessments,
                    "revision": slot.revision,
                    "descriptions": slot.descriptions,
                    "image_path": path,
                }
            )
        manifest_classes.append(
            {
                "name": gallery.label.name,
                "canonical": gallery.label.canonical,
                "origin": gallery.label.origin.value,
                "accepted": gallery.accepted_count,
                "discarded": gallery.discarded_count,
                "failed": gallery.failed_count,
                "slots": slots,
            }
        )
    manifest = {"classes": manifest_classes}
    write_json_atomic(root / MANIFEST_NAME, manifest)
    return manifest


def load_gallery_tree(root: Path | str, registry: ClassRegistry) -> list[ClassGallery]:
    """Reload persisted galleries (accepted images only) for precomputation.

    Slot records come back with their manifest fields; only accepted slots
    have their image bytes loaded, since those are all the feature stage
    needs.
    """
    root = Path(root)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.exists():
        raise GalleryError(f"no gallery manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    by_canonical = {c["canonical"]: c for c in manifest.get("classes", [])}
    galleries = []
    for label in registry.classes:
        record = by_canonical.get(label.canonical)
        if record is None:
            raise GalleryError(f"gallery manifest is missing class {label.canonical!r}")
        images = []
        slots = []
        for slot in record["slots"]:
            image = None
            if slot["status"] == "accepted":
                data = (root / slot["image_path"]).read_bytes()
                fmt = slot["image_path"].rsplit(".", 1)[-1]
                desc = SceneDescription(
                    label=label,
                    index_k=slot["k"],
                    text=slot["descriptions"][-1],
                    revision=slot["revision"],
                )
                image = GeneratedImage(
                    data=data, format=fmt, source=desc, status=ImageStatus.ACCEPTED
                )
                images.append(image)
            slots.append(
                SlotRecord(
                    index_k=slot["k"],
                    descriptions=list(slot["descriptions"]),
                    status=slot["status"],
                    assessments=slot["assessments"],
                    image=image,
                )
            )
        galleries.append(ClassGallery(label=label, images=images, slots=slots))
    return galleries
