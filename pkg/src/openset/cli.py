"""Command-line interface.

Stages can run separately (``simulate`` -> ``gallery`` -> ``precompute`` ->
``score``) or end to end (``evaluate``); ``ablate`` wraps ``evaluate`` with
a named preset applied.  All artifact writes are atomic, and with the mock
backends two identical invocations produce byte-identical outputs.

Exit codes: 0 success, 1 configuration or input error, 2 backend error,
3 partial failure (some units finished, the report covers them).
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from .backends.base import Backends
from .config import (
    ABLATION_PRESETS,
    PipelineConfig,
    apply_preset,
    build_backends,
    load_config,
)
from .core import ClassRegistry
from .errors import (
    BackendError,
    ConfigError,
    GalleryError,
    PartialFailure,
    PipelineError,
    SimulationError,
)
from .evaluation import (
    ManifestRow,
    StageSettings,
    load_dataset_manifest,
    run_protocol,
)
from .gallery import GalleryMode, build_all_galleries, load_gallery_tree, write_gallery_tree
from .ioutil import write_jsonl_atomic
from .prompts import load_templates
from .scoring import score_image
from .simulate import ChatTranscript, simulate_all, write_transcripts
from .store import FeatureStore

log = logging.getLogger(__name__)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="TOML config file")
    parser.add_argument("--verbose", "-v", action="store_true", help="debug logging")
    parser.add_argument("--alpha", type=float, default=None, help="fusion weight override")
    parser.add_argument("--k", type=int, default=None, help="descriptions per class override")
    parser.add_argument(
        "--max-cycles",
        type=int,
        default=None,
        help="override both the self-check and cross-assessment cycle caps",
    )
    parser.add_argument(
        "--mode",
        choices=[m.value for m in GalleryMode],
        default=None,
        help="gallery mode override",
    )
    parser.add_argument("--parallelism", type=int, default=None, help="worker threads")
    parser.add_argument("--seed", type=int, default=None, help="master seed override")


def _configure(args: argparse.Namespace) -> PipelineConfig:
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    cfg = load_config(args.config)
    if args.alpha is not None:
        cfg.scoring = dataclasses.replace(cfg.scoring, alpha=args.alpha)
    if args.k is not None:
        cfg.gallery.k = args.k
    if args.max_cycles is not None:
        cfg.simulation.max_selfcheck_cycles = args.max_cycles
        cfg.gallery.max_crossassess_cycles = args.max_cycles
    if args.mode is not None:
        cfg.gallery.mode = GalleryMode(args.mode)
    if args.parallelism is not None:
        cfg.parallelism = args.parallelism
    if args.seed is not None:
        cfg.evaluation.master_seed = args.seed
    return cfg


def _settings(cfg: PipelineConfig) -> StageSettings:
    templates = load_templates(cfg.templates_file or None)
    return StageSettings(
        simulation=cfg.simulation,
        gallery=cfg.gallery,
        scoring=cfg.scoring,
        templates=templates,
        simulate_virtual=cfg.simulate_virtual,
        parallelism=cfg.parallelism,
    )


def _read_classes(args: argparse.Namespace) -> list[str]:
    if args.classes:
        names = [c.strip() for c in args.classes.split(",") if c.strip()]
    elif args.classes_file:
        names = [
            line.strip()
            for line in Path(args.classes_file).read_text(encoding="utf-8").splitlines()
            if line.strip()
        ]
    else:
        raise ConfigError("pass --classes or --classes-file")
    if not names:
        raise ConfigError("no class names given")
    return names


def _cmd_simulate(args: argparse.Namespace) -> int:
    cfg = _configure(args)
    settings = _settings(cfg)
    backends = build_backends(cfg)
    registry = ClassRegistry.from_closed(_read_classes(args))
    transcripts: list[ChatTranscript] = []
    if cfg.simulate_virtual:
        registry = simulate_all(
            registry,
            backends.chat,
            settings.simulation,
            settings.templates,
            parallelism=settings.parallelism,
            transcripts=transcripts,
        )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    registry.save(out / "registry.json")
    write_transcripts(transcripts, out / "transcripts.jsonl")
    log.info("registry has %d classes (%d closed)", len(registry), registry.closed_count)
    return 0


def _cmd_gallery(args: argparse.Namespace) -> int:
    cfg = _configure(args)
    settings = _settings(cfg)
    backends = build_backends(cfg)
    registry = ClassRegistry.load(args.registry)
    store = FeatureStore(Path(args.store))
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
    write_gallery_tree(galleries, Path(args.out))
    store.save()
    accepted = sum(g.accepted_count for g in galleries)
    log.info("built %d galleries with %d accepted images", len(galleries), accepted)
    return 0


def _cmd_precompute(args: argparse.Namespace) -> int:
    cfg = _configure(args)
    backends = build_backends(cfg)
    registry = ClassRegistry.load(args.registry)
    store = FeatureStore(Path(args.store))
    text_calls = store.precompute_text_features(registry, backends.image_text)
    galleries = load_gallery_tree(Path(args.gallery_dir), registry)
    image_calls = store.precompute_gallery_features(galleries, backends.image)
    store.save()
    log.info("precomputed %d text and %d image features", text_calls, image_calls)
    return 0


def _score_manifest_rows(
    rows: list[ManifestRow],
    registry: ClassRegistry,
    store: FeatureStore,
    backends: Backends,
    cfg: PipelineConfig,
    data_root: Path,
) -> list[dict]:
    out = []
    for row in sorted(rows, key=lambda r: r.path):
        if row.split_role != "test":
            continue
        data = (data_root / row.path).read_bytes()
        fmt = Path(row.path).suffix.lstrip(".").lower() or "png"
        clip_vec = backends.image_text.embed_image(data, fmt)
        dino_vec = backends.image.embed_image(data, fmt)
        breakdown = score_image(clip_vec, dino_vec, registry, store, cfg.scoring)
        out.append(breakdown.row(row.path))
    return out


def _cmd_score(args: argparse.Namespace) -> int:
    cfg = _configure(args)
    backends = build_backends(cfg)
    registry = ClassRegistry.load(args.registry)
    store = FeatureStore(Path(args.store))
    rows = load_dataset_manifest(args.images)
    records = _score_manifest_rows(
        rows, registry, store, backends, cfg, Path(cfg.evaluation.data_root)
    )
    write_jsonl_atomic(args.out, records)
    log.info("scored %d images", len(records))
    return 0


def _load_protocol_datasets(cfg: PipelineConfig) -> dict[str, list[ManifestRow]]:
    if not cfg.evaluation.datasets:
        raise ConfigError("config has no [evaluation] datasets table")
    return {
        name: load_dataset_manifest(path) for name, path in sorted(cfg.evaluation.datasets.items())
    }


def _cmd_evaluate(args: argparse.Namespace, preset: str | None = None) -> int:
    cfg = _configure(args)
    if preset is not None:
        cfg = apply_preset(cfg, preset)
    if args.protocol:
        cfg.evaluation.protocol = args.protocol
    if getattr(args, "split_file", None):
        cfg.evaluation.split_file = str(args.split_file)
    settings = _settings(cfg)
    backends = build_backends(cfg)
    dataset_rows = _load_protocol_datasets(cfg)
    report = run_protocol(
        cfg.evaluation.protocol,
        dataset_rows,
        backends,
        settings,
        Path(args.out),
        master_seed=cfg.evaluation.master_seed,
        split_file=cfg.evaluation.split_file or None,
        data_root=Path(cfg.evaluation.data_root),
    )
    sys.stdout.write(report.to_text())
    return 0


def _cmd_ablate(args: argparse.Namespace) -> int:
    return _cmd_evaluate(args, preset=args.preset)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="openset",
        description="Training-free open-set recognition pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="expand closed classes with virtual ones")
    _add_common(p)
    p.add_argument("--classes", help="comma-separated closed-set class names")
    p.add_argument("--classes-file", type=Path, help="file with one class name per line")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.set_defaults(handler=_cmd_simulate)

    p = sub.add_parser("gallery", help="build per-class image galleries")
    _add_common(p)
    p.add_argument("--registry", type=Path, required=True)
    p.add_argument("--store", type=Path, required=True, help="feature store directory")
    p.add_argument("--out", type=Path, required=True, help="gallery output directory")
    p.set_defaults(handler=_cmd_gallery)

    p = sub.add_parser("precompute", help="embed class prompts and gallery images")
    _add_common(p)
    p.add_argument("--registry", type=Path, required=True)
    p.add_argument("--gallery-dir", type=Path, required=True)
    p.add_argument("--store", type=Path, required=True)
    p.set_defaults(handler=_cmd_precompute)

    p = sub.add_parser("score", help="score test images against a built registry")
    _add_common(p)
    p.add_argument("--registry", type=Path, required=True)
    p.add_argument("--store", type=Path, required=True)
    p.add_argument("--images", type=Path, required=True, help="test image manifest (JSONL)")
    p.add_argument("--out", type=Path, required=True, help="scores JSONL path")
    p.set_defaults(handler=_cmd_score)

    p = sub.add_parser("evaluate", help="run a full protocol and report metrics")
    _add_common(p)
    p.add_argument("--protocol", default=None)
    p.add_argument("--split-file", type=Path, default=None)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(handler=_cmd_evaluate)

    p = sub.add_parser("ablate", help="run evaluate with a named ablation preset")
    _add_common(p)
    p.add_argument("preset", choices=sorted(ABLATION_PRESETS))
    p.add_argument("--protocol", default=None)
    p.add_argument("--split-file", type=Path, default=None)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(handler=_cmd_ablate)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except PartialFailure as exc:
        log.error("partial failure: %s", exc)
        return 3
    except (BackendError, SimulationError, GalleryError) as exc:
        log.error("backend failure: %s", exc)
        return 2
    except PipelineError as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
