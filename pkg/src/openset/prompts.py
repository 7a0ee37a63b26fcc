"""Prompt templates for every chat interaction in the pipeline.

Templates live in a plain-text file (see ``templates/prompts.txt`` for the
shipped defaults) so the exact wording can be swapped without touching code.
Rendering is strict: a placeholder left unbound raises before anything is
sent to a provider.
"""

from __future__ import annotations

import re
import string
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Mapping

from .errors import TemplateError


class PromptId(str, Enum):
    """Identifiers for the chat prompts used across the pipeline."""

    DESCRIBE_ALL = "q1_describe_all"
    DISCRIMINATIVE = "q2_discriminative"
    SHARED_CLASSES = "q3_shared_classes"
    DISSIMILAR = "q_dissimilar"
    DESCRIPTIONS = "q_descriptions"
    REFINE = "q_refine"
    NAIVE_REFINE = "q_naive_refine"
    NO_CHAIN = "q_no_chain"


@dataclass(frozen=True)
class PromptTemplate:
    id: PromptId
    body: str

    def placeholders(self) -> set[str]:
        return {
            field
            for _, field, _, _ in string.Formatter().parse(self.body)
            if field is not None and field != ""
        }

    def render(self, bindings: Mapping[str, object]) -> str:
        """Substitute placeholders; every placeholder must be bound."""
        missing = self.placeholders() - set(bindings)
        if missing:
            raise TemplateError(
                f"template {self.id.value!r} has unbound placeholders: {sorted(missing)}"
            )
        return self.body.format(**bindings)


_HEADER = re.compile(r"^\[([a-z0-9_]+)\]$")


def _parse_template_file(text: str) -> dict[str, str]:
    bodies: dict[str, list[str]] = {}
    current: str | None = None
    for line in text.splitlines():
        header = _HEADER.match(line.strip())
        if header:
            current = header.group(1)
            if current in bodies:
                raise TemplateError(f"duplicate template id: {current!r}")
            bodies[current] = []
            continue
        if current is None:
            if line.strip() and not line.lstrip().startswith("#"):
                raise TemplateError(f"text before first template header: {line!r}")
            continue
        bodies[current].append(line)
    return {tid: "\n".join(lines).strip() for tid, lines in bodies.items()}


def load_templates(path: Path | str | None = None) -> dict[PromptId, PromptTemplate]:
    """Load prompt templates, overlaying a custom file on the defaults.

    Args:
        path: optional custom template file; ids present there replace the
            shipped defaults, ids absent keep them.

    Raises:
        TemplateError: unknown template id, empty body, or malformed file.
    """
    default_text = (
        resources.files("openset").joinpath("templates/prompts.txt").read_text(encoding="utf-8")
    )
    merged = _parse_template_file(default_text)
    if path is not None:
        custom = _parse_template_file(Path(path).read_text(encoding="utf-8"))
        merged.update(custom)

    known = {tid.value for tid in PromptId}
    unknown = set(merged) - known
    if unknown:
        raise TemplateError(f"unknown template ids: {sorted(unknown)}")
    templates: dict[PromptId, PromptTemplate] = {}
    for tid in PromptId:
        body = merged.get(tid.value, "")
        if not body:
            raise TemplateError(f"template {tid.value!r} is missing or empty")
        templates[tid] = PromptTemplate(id=tid, body=body)
    return templates
