"""Run the sidecar: ``python -m embed_sidecar --port 8008``."""

from __future__ import annotations

import argparse

from .config import SidecarConfig
from .service import serve


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="openset-sidecar", description="embedding sidecar service"
    )
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8008)
    parser.add_argument(
        "--image-text-model",
        default="procedural:512",
        help="joint image-text encoder id (real runs: openai/clip-vit-base-patch32)",
    )
    parser.add_argument(
        "--image-model",
        default="procedural:768",
        help="image-only encoder id (real runs: facebook/dinov2-base)",
    )
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--max-batch", type=int, default=64)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    serve(
        SidecarConfig(
            host=args.host,
            port=args.port,
            image_text_model=args.image_text_model,
            image_model=args.image_model,
            device=args.device,
            max_batch=args.max_batch,
        )
    )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
