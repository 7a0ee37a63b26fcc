"""Evaluation harness: protocols, split sampling, and the end-to-end run.

A protocol names the source datasets and how many classes play closed and
open roles.  Splits are sampled deterministically from the master seed (the
RNG is seeded with ``protocol:seed:index``, so split i is stable no matter
how many splits run), or loaded from a split file to match published
partitions.  Each split runs the full pipeline; the report aggregates
AUROC/OSCR as mean plus sample standard deviation across splits.

Datasets are plain JSONL manifests, one image per line:

    {"path": "images/0001.png", "class": "sparrow", "split-role": "test"}

``split-role`` is ``"test"`` for evaluation images; anything else is
ignored by this training-free pipeline but tolerated in the file.
"""

from __future__ import annotations

import json
import logging
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .backends.base import Backends
from .core import ClassRegistry, canonicalize
from .errors import EvaluationError, PartialFailure
from .gallery import GalleryConfig, build_all_galleries, write_gallery_tree
from .ioutil import read_jsonl, write_json_atomic, write_jsonl_atomic, write_text_atomic
from .metrics import LabeledScore, auroc, oscr
from .prompts import PromptId, PromptTemplate
from .scoring import ScoringConfig, score_image
from .simulate import ChatTranscript, SimulationConfig, simulate_all, write_transcripts
from .store import FeatureStore

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ProtocolSpec:
    """Closed/open class counts and their source datasets."""

    name: str
    closed_source: str
    open_source: str
    n_closed: int
    n_open: int
    n_splits: int = 5


PROTOCOLS: dict[str, ProtocolSpec] = {
    "cifar10": ProtocolSpec("cifar10", "cifar10", "cifar10", 6, 4),
    "cifar+10": ProtocolSpec("cifar+10", "cifar10", "cifar100", 4, 10),
    "cifar+50": ProtocolSpec("cifar+50", "cifar10", "cifar100", 4, 50),
    "tinyimagenet": ProtocolSpec("tinyimagenet", "tinyimagenet", "tinyimagenet", 20, 180),
    # Desk-scale protocol for smoke runs and the test suite.
    "toy": ProtocolSpec("toy", "toy", "toy", 3, 2),
}


@dataclass(frozen=True)
class EvaluationSplit:
    """One closed/open partition of class names."""

    protocol: str
    split_index: int
    closed_classes: tuple[str, ...]
    open_classes: tuple[str, ...]
    seed: int

    def __post_init__(self):
        closed = {canonicalize(c) for c in self.closed_classes}
        open_ = {canonicalize(c) for c in self.open_classes}
        if closed & open_:
            raise EvaluationError(f"closed and open classes overlap: {sorted(closed & open_)}")
        spec = PROTOCOLS.get(self.protocol)
        if spec is not None:
            if len(self.closed_classes) != spec.n_closed or len(self.open_classes) != spec.n_open:
                raise EvaluationError(
                    f"protocol {self.protocol} wants {spec.n_closed}/{spec.n_open} classes, "
                    f"got {len(self.closed_classes)}/{len(self.open_classes)}"
                )


def make_splits(
    protocol: str,
    master_seed: int,
    class_lists: Mapping[str, Sequence[str]],
) -> list[EvaluationSplit]:
    """Sample the protocol's splits deterministically from the master seed.

    ``class_lists`` maps dataset name to its class names.  Open classes are
    sampled from the open source excluding anything drawn as closed, so the
    two sides never overlap even when both come from one dataset.
    """
    spec = PROTOCOLS.get(protocol)
    if spec is None:
        raise EvaluationError(f"unknown protocol {protocol!r} (have {sorted(PROTOCOLS)})")
    for source in (spec.closed_source, spec.open_source):
        if source not in class_lists:
            raise EvaluationError(f"protocol {protocol} needs a {source!r} dataset manifest")
    closed_pool = sorted(set(class_lists[spec.closed_source]))
    open_pool = sorted(set(class_lists[spec.open_source]))

    splits = []
    for index in range(spec.n_splits):
        rng = random.Random(f"{protocol}:{master_seed}:{index}")
        if len(closed_pool) < spec.n_closed:
            raise EvaluationError(
                f"{spec.closed_source} has {len(closed_pool)} classes, need {spec.n_closed}"
            )
        closed = rng.sample(closed_pool, spec.n_closed)
        taken = {canonicalize(c) for c in closed}
        candidates = [c for c in open_pool if canonicalize(c) not in taken]
        if len(candidates) < spec.n_open:
            raise EvaluationError(
                f"{spec.open_source} has {len(candidates)} non-overlapping classes, "
                f"need {spec.n_open}"
            )
        open_ = rng.sample(candidates, spec.n_open)
        splits.append(
            EvaluationSplit(
                protocol=protocol,
                split_index=index,
                closed_classes=tuple(closed),
                open_classes=tuple(open_),
                seed=master_seed,
            )
        )
    return splits


def write_split_file(splits: Sequence[EvaluationSplit], path: Path | str) -> None:
    doc = {
        "protocol": splits[0].protocol,
        "master_seed": splits[0].seed,
        "splits": [
            {
                "split_index": s.split_index,
                "closed_classes": list(s.closed_classes),
                "open_classes": list(s.open_classes),
            }
            for s in splits
        ],
    }
    write_json_atomic(path, doc)


def load_split_file(path: Path | str, protocol: str | None = None) -> list[EvaluationSplit]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise EvaluationError(f"cannot read split file {path}: {exc}") from exc
    file_protocol = doc.get("protocol")
    if protocol is not None and file_protocol != protocol:
        raise EvaluationError(
            f"split file is for protocol {file_protocol!r}, expected {protocol!r}"
        )
    seed = int(doc.get("master_seed", 0))
    return [
        EvaluationSplit(
            protocol=file_protocol,
            split_index=int(s["split_index"]),
            closed_classes=tuple(s["closed_classes"]),
            open_classes=tuple(s["open_classes"]),
            seed=seed,
        )
        for s in doc.get("splits", [])
    ]


# --- dataset manifests -------------------------------------------------------


@dataclass(frozen=True)
class ManifestRow:
    path: str
    class_name: str
    split_role: str


def load_dataset_manifest(path: Path | str) -> list[ManifestRow]:
    rows = []
    for record in read_jsonl(path):
        try:
            role = record.get("split-role", record.get("split_role", "test"))
            rows.append(
                ManifestRow(
                    path=record["path"], class_name=record["class"], split_role=str(role)
                )
            )
        except KeyError as exc:
            raise EvaluationError(f"manifest row missing {exc} in {path}") from exc
    if not rows:
        raise EvaluationError(f"dataset manifest {path} is empty")
    return rows


def dataset_classes(rows: Sequence[ManifestRow]) -> list[str]:
    return sorted({r.class_name for r in rows})


# --- reports -----------------------------------------------------------------


@dataclass(frozen=True)
class SplitResult:
    split_index: int
    auroc: float
    oscr: float
    n_closed_rows: int
    n_open_rows: int
    closed_classes: tuple[str, ...]
    open_classes: tuple[str, ...]


@dataclass(frozen=True)
class MetricsReport:
    """Per-split metrics plus their mean and sample standard deviation."""

    protocol: str
    master_seed: int
    splits: tuple[SplitResult, ...]

    @staticmethod
    def _aggregate(values: Sequence[float]) -> tuple[float, float]:
        arr = np.asarray(values, dtype=np.float64)
        mean = float(arr.mean())
        std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
        return mean, std

    @property
    def auroc_mean(self) -> float:
        return self._aggregate([s.auroc for s in self.splits])[0]

    @property
    def auroc_std(self) -> float:
        return self._aggregate([s.auroc for s in self.splits])[1]

    @property
    def oscr_mean(self) -> float:
        return self._aggregate([s.oscr for s in self.splits])[0]

    @property
    def oscr_std(self) -> float:
        return self._aggregate([s.oscr for s in self.splits])[1]

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "master_seed": self.master_seed,
            "splits": [
                {
                    "split_index": s.split_index,
                    "auroc": s.auroc,
                    "oscr": s.oscr,
                    "n_closed_rows": s.n_closed_rows,
                    "n_open_rows": s.n_open_rows,
                    "closed_classes": list(s.closed_classes),
                    "open_classes": list(s.open_classes),
                }
                for s in self.splits
            ],
            "auroc_mean": self.auroc_mean,
            "auroc_std": self.auroc_std,
            "oscr_mean": self.oscr_mean,
            "oscr_std": self.oscr_std,
        }

    def to_text(self) -> str:
        lines = [
            f"protocol: {self.protocol}",
            f"master seed: {self.master_seed}",
            "",
            f"{'split':>5}  {'auroc':>8}  {'oscr':>8}  {'closed':>6}  {'open':>6}",
        ]
        for s in self.splits:
            lines.append(
                f"{s.split_index:>5}  {s.auroc:>8.4f}  {s.oscr:>8.4f}"
                f"  {s.n_closed_rows:>6}  {s.n_open_rows:>6}"
            )
        lines.append("")
        lines.append(f"auroc: {self.auroc_mean:.4f} +/- {self.auroc_std:.4f}")
        lines.append(f"oscr:  {self.oscr_mean:.4f} +/- {self.oscr_std:.4f}")
        return "\n".join(lines) + "\n"


# --- the pipeline run ---------------------------------------------------------


@dataclass
class StageSettings:
    """Everything run_split needs besides the split itself."""

    simulation: SimulationConfig
    gallery: GalleryConfig
    scoring: ScoringConfig
    templates: dict[PromptId, PromptTemplate]
    simulate_virtual: bool = True
    parallelism: int = 4


def build_registry_for_split(
    split: EvaluationSplit,
    backends: Backends,
    settings: StageSettings,
    transcripts: list[ChatTranscript] | None = None,
) -> ClassRegistry:
    """Closed classes plus, unless disabled, simulated virtual classes."""
    registry = ClassRegistry.from_closed(split.closed_classes)
    if not settings.simulate_virtual:
        return registry
    return simulate_all(
        registry,
        backends.chat,
        settings.simulation,
        settings.templates,
        parallelism=settings.parallelism,
        transcripts=transcripts,
    )


def score_rows(
    rows: Sequence[ManifestRow],
    split: EvaluationSplit,
    registry: ClassRegistry,
    store: FeatureStore,
    backends: Backends,
    scoring_cfg: ScoringConfig,
    *,
    parallelism: int = 4,
    root: Path | str = ".",
) -> tuple[list[LabeledScore], list[dict]]:
    """Score every test image of the split's classes, in manifest-path order.

    Returns the labeled score rows and the full per-image breakdown dicts.
    Images score concurrently; output order is by sorted image path, so the
    result is schedule-independent.
    """
    closed = {canonicalize(c) for c in split.closed_classes}
    open_ = {canonicalize(c) for c in split.open_classes}
    wanted = [
        r
        for r in sorted(rows, key=lambda r: r.path)
        if r.split_role == "test" and canonicalize(r.class_name) in (closed | open_)
    ]
    if not wanted:
        raise EvaluationError("no test images match the split's classes")
    root = Path(root)

    def score_one(row: ManifestRow) -> tuple[LabeledScore, dict]:
        data = (root / row.path).read_bytes()
        fmt = Path(row.path).suffix.lstrip(".").lower() or "png"
        clip_vec = backends.image_text.embed_image(data, fmt)
        dino_vec = backends.image.embed_image(data, fmt)
        breakdown = score_image(clip_vec, dino_vec, registry, store, scoring_cfg)
        canonical = canonicalize(row.class_name)
        labeled = LabeledScore(
            image_id=row.path,
            is_closed=canonical in closed,
            true_class=canonical if canonical in closed else None,
            predicted_closed_class=breakdown.predicted.canonical,
            score=breakdown.score,
        )
        return labeled, breakdown.detail(row.path)

    with ThreadPoolExecutor(max_workers=max(1, parallelism)) as pool:
        results = list(pool.map(score_one, wanted))
    labeled = [r[0] for r in results]
    details = [r[1] for r in results]
    return labeled, details


def run_split(
    split: EvaluationSplit,
    rows: Sequence[ManifestRow],
    backends: Backends,
    settings: StageSettings,
    out_dir: Path | str,
    *,
    data_root: Path | str = ".",
) -> SplitResult:
    """Run the full pipeline for one split, persisting every artifact."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    transcripts: list[ChatTranscript] = []
    registry = build_registry_for_split(split, backends, settings, transcripts)
    registry.save(out / "registry.json")
    write_transcripts(transcripts, out / "transcripts.jsonl")

    store = FeatureStore(out / "store")
    store.precompute_text_features(registry, backends.image_text)
    galleries = build_all_galleries(
        registry,
        store,
        backends.chat,
        backends.imagegen,
        backends.image_text,
        settings.gallery,
        settings.scoring,
        settings.templates,
        parallelism=settings.parallelism,
    )
    write_gallery_tree(galleries, out)
    store.precompute_gallery_features(galleries, backends.image)
    store.save()

    labeled, details = score_rows(
        rows,
        split,
        registry,
        store,
        backends,
        settings.scoring,
        parallelism=settings.parallelism,
        root=data_root,
    )
    write_jsonl_atomic(
        out / "scores.jsonl",
        [
            {
                "image_id": r.image_id,
                "S": r.score,
                "predicted_closed_class": r.predicted_closed_class,
                "p_inc": d["p_inc"],
            }
            for r, d in zip(labeled, details)
        ],
    )
    write_jsonl_atomic(out / "breakdowns.jsonl", details)

    return SplitResult(
        split_index=split.split_index,
        auroc=auroc(labeled),
        oscr=oscr(labeled),
        n_closed_rows=sum(1 for r in labeled if r.is_closed),
        n_open_rows=sum(1 for r in labeled if not r.is_closed),
        closed_classes=split.closed_classes,
        open_classes=split.open_classes,
    )


def run_protocol(
    protocol: str,
    dataset_rows: Mapping[str, Sequence[ManifestRow]],
    backends: Backends,
    settings: StageSettings,
    out_dir: Path | str,
    *,
    master_seed: int = 0,
    split_file: Path | str | None = None,
    data_root: Path | str = ".",
) -> MetricsReport:
    """Run every split of a protocol and write the aggregate report.

    A failing split stops the run; the report for the splits that finished
    is still written and attached to the raised :class:`PartialFailure`.
    """
    spec = PROTOCOLS.get(protocol)
    if spec is None:
        raise EvaluationError(f"unknown protocol {protocol!r} (have {sorted(PROTOCOLS)})")
    if split_file is not None:
        splits = load_split_file(split_file, protocol)
    else:
        class_lists = {
            name: dataset_classes(rows_) for name, rows_ in dataset_rows.items()
        }
        splits = make_splits(protocol, master_seed, class_lists)

    # Rows the protocol can see: union of its source datasets.
    sources = {spec.closed_source, spec.open_source}
    for source in sources:
        if source not in dataset_rows:
            raise EvaluationError(f"protocol {protocol} needs dataset {source!r}")
    merged_rows: list[ManifestRow] = []
    seen_paths: set[str] = set()
    for source in sorted(sources):
        for row in dataset_rows[source]:
            if row.path not in seen_paths:
                seen_paths.add(row.path)
                merged_rows.append(row)

    out = Path(out_dir)
    results: list[SplitResult] = []
    for split in splits:
        try:
            results.append(
                run_split(
                    split,
                    merged_rows,
                    backends,
                    settings,
                    out / f"split_{split.split_index}",
                    data_root=data_root,
                )
            )
        except Exception as exc:
            partial = MetricsReport(
                protocol=protocol, master_seed=master_seed, splits=tuple(results)
            )
            if results:
                write_json_atomic(out / "report.json", partial.to_dict())
                write_text_atomic(out / "report.txt", partial.to_text())
            raise PartialFailure(
                f"split {split.split_index} failed: {exc}",
                completed=partial,
                failures={f"split_{split.split_index}": str(exc)},
            ) from exc

    report = MetricsReport(protocol=protocol, master_seed=master_seed, splits=tuple(results))
    write_json_atomic(out / "report.json", report.to_dict())
    write_text_atomic(out / "report.txt", report.to_text())
    return report
