"""Run configuration: TOML file, ablation presets, backend wiring.

Secrets never live in config files.  The config names the environment
variable that holds each auth token (``token_env``); the HTTP adapters read
it at construction time.

Ablation presets are defined as explicit overrides on top of the full
pipeline, so ``flatten``/``diff_configs`` can prove a preset changes
exactly its documented knobs and nothing else.
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

from .backends.base import Backends, RetryPolicy
from .backends.http_llm import HttpChatClient, HttpImageGenClient
from .backends.mocks import (
    DeterministicImageGen,
    EmbedderOverrides,
    MockImageEmbedder,
    MockImageTextEmbedder,
    ScriptedLLM,
)
from .backends.sidecar import embedding_sidecar_client
from .errors import ConfigError, PipelineError
from .gallery import GalleryConfig, GalleryMode
from .scoring import ScoringConfig
from .simulate import SimulationConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass
class ChatSettings:
    endpoint: str = ""
    model: str = "gpt-3.5-turbo"
    token_env: str = "OPENSET_CHAT_TOKEN"
    timeout: float = 60.0


@dataclass
class ImageGenSettings:
    endpoint: str = ""
    model: str = ""
    token_env: str = "OPENSET_IMAGEGEN_TOKEN"
    timeout: float = 120.0
    size: str = "256x256"


@dataclass
class SidecarSettings:
    base_url: str = "http://127.0.0.1:8008"
    timeout: float = 60.0
    batch_size: int = 16


@dataclass
class MockSettings:
    """Fixture files for fully offline deterministic runs."""

    llm_script: str = ""
    llm_default: str = ""
    embed_overrides: str = ""
    dim_image_text: int = 16
    dim_image: int = 16


@dataclass
class BackendSettings:
    kind: str = "mock"  # "mock" | "http"
    retry_attempts: int = 3
    retry_base_delay: float = 0.5
    max_in_flight: int = 4
    chat: ChatSettings = field(default_factory=ChatSettings)
    imagegen: ImageGenSettings = field(default_factory=ImageGenSettings)
    sidecar: SidecarSettings = field(default_factory=SidecarSettings)
    mock: MockSettings = field(default_factory=MockSettings)


@dataclass
class EvalSettings:
    protocol: str = "toy"
    master_seed: int = 0
    datasets: dict[str, str] = field(default_factory=dict)
    split_file: str = ""
    data_root: str = "."


@dataclass
class PipelineConfig:
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    gallery: GalleryConfig = field(default_factory=GalleryConfig)
    scoring: ScoringConfig = field(default_factory=ScoringConfig)
    backends: BackendSettings = field(default_factory=BackendSettings)
    evaluation: EvalSettings = field(default_factory=EvalSettings)
    simulate_virtual: bool = True
    parallelism: int = 4
    out_dir: str = "runs/out"
    templates_file: str = ""


_SECTION_TYPES = {
    "simulation": SimulationConfig,
    "gallery": GalleryConfig,
    "scoring": ScoringConfig,
    "evaluation": EvalSettings,
}
_BACKEND_SUBSECTIONS = {
    "chat": ChatSettings,
    "imagegen": ImageGenSettings,
    "sidecar": SidecarSettings,
    "mock": MockSettings,
}
_RUN_KEYS = {"simulate_virtual", "parallelism", "out_dir", "templates_file"}


def _build_section(cls, data: dict, where: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys in [{where}]: {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError, PipelineError) as exc:
        raise ConfigError(f"bad [{where}] section: {exc}") from exc


def config_from_dict(doc: dict) -> PipelineConfig:
    cfg = PipelineConfig()
    for section, data in doc.items():
        if section in _SECTION_TYPES:
            if not isinstance(data, dict):
                raise ConfigError(f"[{section}] must be a table")
            setattr(cfg, section, _build_section(_SECTION_TYPES[section], data, section))
        elif section == "backends":
            plain = {k: v for k, v in data.items() if not isinstance(v, dict)}
            settings = _build_section(BackendSettings, plain, "backends")
            for name, sub in data.items():
                if isinstance(sub, dict):
                    if name not in _BACKEND_SUBSECTIONS:
                        raise ConfigError(f"unknown section [backends.{name}]")
                    setattr(
                        settings,
                        name,
                        _build_section(_BACKEND_SUBSECTIONS[name], sub, f"backends.{name}"),
                    )
            cfg.backends = settings
        elif section == "run":
            unknown = set(data) - _RUN_KEYS
            if unknown:
                raise ConfigError(f"unknown keys in [run]: {sorted(unknown)}")
            for key, value in data.items():
                setattr(cfg, key, value)
        else:
            raise ConfigError(f"unknown config section [{section}]")
    if cfg.backends.kind not in ("mock", "http"):
        raise ConfigError(f"backends.kind must be 'mock' or 'http', got {cfg.backends.kind!r}")
    return cfg


def load_config(path: Path | str | None) -> PipelineConfig:
    """Parse a TOML config file; ``None`` gives the defaults."""
    if path is None:
        return PipelineConfig()
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config {path} is not valid TOML: {exc}") from exc
    return config_from_dict(doc)


# --- flattening and presets ---------------------------------------------------


def flatten(cfg: PipelineConfig) -> dict[str, Any]:
    """Dotted-key scalar view of a config, for dumps and diffs."""
    flat: dict[str, Any] = {}

    def walk(prefix: str, obj: Any) -> None:
        if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
            for f in dataclasses.fields(obj):
                walk(f"{prefix}{f.name}.", getattr(obj, f.name))
        elif isinstance(obj, dict):
            for key in sorted(obj):
                walk(f"{prefix}{key}.", obj[key])
        else:
            value = obj.value if hasattr(obj, "value") else obj
            flat[prefix[:-1]] = value

    walk("", cfg)
    return flat


def diff_configs(a: PipelineConfig, b: PipelineConfig) -> dict[str, tuple[Any, Any]]:
    fa, fb = flatten(a), flatten(b)
    keys = set(fa) | set(fb)
    return {k: (fa.get(k), fb.get(k)) for k in sorted(keys) if fa.get(k) != fb.get(k)}


# Named ablations: each entry is the complete set of knobs it changes
# relative to the full pipeline.
ABLATION_PRESETS: dict[str, dict[str, Any]] = {
    "no-reasoning": {"simulation.intermediate_reasoning": False},
    "no-selfcheck": {"simulation.self_checking": False},
    "no-crossassess": {"gallery.mode": GalleryMode.NO_CROSS_ASSESS},
    "check-discard": {"gallery.mode": GalleryMode.CHECK_AND_DISCARD},
    "naive-refine": {"gallery.mode": GalleryMode.CHECK_AND_NAIVE_REFINE},
    "names-only": {"scoring.alpha": 1.0},
    "images-only": {"scoring.alpha": 0.0},
    "softmax-baseline": {"simulate_virtual": False},
}


def apply_preset(cfg: PipelineConfig, preset: str) -> PipelineConfig:
    """Return a copy of ``cfg`` with one ablation preset applied."""
    overrides = ABLATION_PRESETS.get(preset)
    if overrides is None:
        raise ConfigError(f"unknown preset {preset!r} (have {sorted(ABLATION_PRESETS)})")
    out = replace(cfg)
    for dotted, value in overrides.items():
        parts = dotted.split(".")
        if len(parts) == 1:
            out = replace(out, **{parts[0]: value})
        else:
            section = getattr(out, parts[0])
            out = replace(out, **{parts[0]: replace(section, **{parts[1]: value})})
    return out


# --- backend construction -------------------------------------------------------


def build_backends(cfg: PipelineConfig) -> Backends:
    """Construct the four model clients the config describes."""
    b = cfg.backends
    retry = RetryPolicy(max_attempts=b.retry_attempts, base_delay=b.retry_base_delay)
    if b.kind == "mock":
        if b.mock.llm_script:
            chat = ScriptedLLM.from_json(
                b.mock.llm_script,
                strict=not b.mock.llm_default,
                default=b.mock.llm_default or None,
            )
        else:
            raise ConfigError("mock backends need backends.mock.llm_script")
        overrides = (
            EmbedderOverrides.from_json(b.mock.embed_overrides)
            if b.mock.embed_overrides
            else EmbedderOverrides()
        )
        return Backends(
            chat=chat,
            imagegen=DeterministicImageGen(),
            image_text=MockImageTextEmbedder(b.mock.dim_image_text, overrides=overrides),
            image=MockImageEmbedder(b.mock.dim_image, overrides=overrides),
        )
    chat = HttpChatClient(
        b.chat.endpoint,
        b.chat.model,
        token_env=b.chat.token_env,
        timeout=b.chat.timeout,
        retry=retry,
        max_in_flight=b.max_in_flight,
    )
    imagegen = HttpImageGenClient(
        b.imagegen.endpoint,
        b.imagegen.model or None,
        token_env=b.imagegen.token_env,
        timeout=b.imagegen.timeout,
        retry=retry,
        size=b.imagegen.size,
        max_in_flight=b.max_in_flight,
    )
    image_text, image = embedding_sidecar_client(
        b.sidecar.base_url,
        timeout=b.sidecar.timeout,
        batch_size=b.sidecar.batch_size,
        retry=retry,
    )
    return Backends(chat=chat, imagegen=imagegen, image_text=image_text, image=image)
