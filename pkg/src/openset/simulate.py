"""Virtual open-set simulation: asking the chat model for lookalike classes.

For each closed-set class the model walks a three-question chain (describe
everything, isolate the discriminative features of the target, then name
other classes sharing them).  Answers are parsed into candidate labels and
appended to a working copy of the registry; with self-checking enabled the
chain repeats against the grown list until a round adds nothing new or the
cycle cap is hit.  A final single-shot question collects classes dissimilar
to the whole list.

Per-class runs are independent (each starts from the closed-set registry),
which makes them safe to parallelize; results are merged in registry order
so the outcome does not depend on scheduling.
"""

from __future__ import annotations

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .backends.base import LLMClient, Turn
from .core import ClassLabel, ClassOrigin, ClassRegistry, RegistryError, canonicalize
from .errors import BackendError, PartialFailure, SimulationError
from .ioutil import write_jsonl_atomic
from .prompts import PromptId, PromptTemplate, load_templates

log = logging.getLogger(__name__)

# Answers that mean "no such classes", not a class called "none".
_SENTINELS = {"none", "n/a", "na", "no", "nothing"}

_BULLET = re.compile(r"^\s*(?:[-*]\s+|\d+[.)]\s+)(.*)$")
_PARENTHETICAL = re.compile(r"\([^)]*\)")


@dataclass
class SimulationConfig:
    """Knobs for the simulation stage."""

    max_selfcheck_cycles: int = 3
    intermediate_reasoning: bool = True
    self_checking: bool = True
    include_dissimilar: bool = True

    def __post_init__(self):
        if self.max_selfcheck_cycles < 1:
            raise ValueError("max_selfcheck_cycles must be >= 1")


@dataclass
class ChatTranscript:
    """Ordered record of one conversation, for audit dumps.

    Turns must alternate user/assistant starting with user.
    """

    class_scope: str | None
    round_index: int
    turns: list[Turn] = field(default_factory=list)

    def add(self, role: str, text: str) -> None:
        expected = "user" if len(self.turns) % 2 == 0 else "assistant"
        if role != expected:
            raise ValueError(f"turn {len(self.turns)} must be {expected!r}, got {role!r}")
        self.turns.append((role, text))


def write_transcripts(transcripts: Sequence[ChatTranscript], path: Path | str) -> None:
    """Dump transcripts as JSONL, one turn per line."""
    rows = []
    for t in transcripts:
        for role, text in t.turns:
            rows.append(
                {"class": t.class_scope, "round": t.round_index, "role": role, "text": text}
            )
    write_jsonl_atomic(path, rows)


def _join_classes(names: Sequence[str]) -> str:
    return ", ".join(names)


def build_question_chain(
    registry_names: Sequence[str],
    target: str,
    templates: dict[PromptId, PromptTemplate] | None = None,
) -> list[str]:
    """Instantiate the three-question chain for one target class.

    The target must appear in ``registry_names`` (it is the class whose
    discriminative features the chain isolates).
    """
    if target not in registry_names:
        raise SimulationError(f"target {target!r} is not in the class list")
    templates = templates or load_templates()
    classes = _join_classes(registry_names)
    return [
        templates[PromptId.DESCRIBE_ALL].render({"classes": classes}),
        templates[PromptId.DISCRIMINATIVE].render({"class": target}),
        templates[PromptId.SHARED_CLASSES].render({}),
    ]


def _clean_candidate(raw: str) -> str | None:
    text = _PARENTHETICAL.sub("", raw)
    text = text.strip().rstrip(".,;:!?").strip()
    text = " ".join(text.split())
    if not text:
        return None
    return text


def parse_class_list(
    answer: str,
    registry: ClassRegistry,
    origin: ClassOrigin = ClassOrigin.VIRTUAL_SIMILAR,
) -> list[ClassLabel]:
    """Extract candidate class names from a free-form chat answer.

    Bulleted or numbered lines win when present; otherwise the final
    sentence is split on commas and "and".  Candidates are cleaned of
    parenthetical glosses and trailing punctuation, canonicalized, and
    dropped when they duplicate the registry, duplicate each other, or are
    a no-answer sentinel ("none", ...).  An answer with no candidates
    yields an empty list, never an error.
    """
    raw_items: list[str] = []
    for line in answer.splitlines():
        m = _BULLET.match(line)
        if m:
            raw_items.append(m.group(1))
    if not raw_items:
        sentences = [s for s in re.split(r"[.!?\n]+", answer) if s.strip()]
        if sentences:
            tail = sentences[-1]
            # Drop lead-ins like "Classes that share these features are ...".
            if ":" in tail:
                tail = tail.rsplit(":", 1)[1]
            elif " are " in tail:
                tail = tail.rsplit(" are ", 1)[1]
            tail = re.sub(r"\band\b", ",", tail)
            raw_items = list(tail.split(","))

    labels: list[ClassLabel] = []
    seen: set[str] = set()
    existing = set(registry.canonicals())
    for raw in raw_items:
        cleaned = _clean_candidate(raw)
        if cleaned is None:
            continue
        canonical = canonicalize(cleaned)
        if canonical in _SENTINELS:
            continue
        if canonical in existing or canonical in seen:
            log.debug("dropping duplicate candidate %r", cleaned)
            continue
        seen.add(canonical)
        labels.append(ClassLabel.of(cleaned, origin))
    return labels


def _ask(
    chat: LLMClient,
    transcript: ChatTranscript,
    prompt: str,
    *,
    target: str,
    round_index: int,
) -> str:
    transcript.add("user", prompt)
    try:
        answer = chat.send(list(transcript.turns))
    except BackendError as exc:
        raise SimulationError(
            f"chat call failed for class {target!r} in round {round_index}: {exc}"
        ) from exc
    transcript.add("assistant", answer)
    return answer


def simulate_class(
    registry: ClassRegistry,
    target: ClassLabel,
    chat: LLMClient,
    cfg: SimulationConfig,
    templates: dict[PromptId, PromptTemplate] | None = None,
    transcripts: list[ChatTranscript] | None = None,
) -> list[ClassLabel]:
    """Collect virtual lookalike classes for one closed-set target.

    Each round runs in a fresh conversation against the target's private
    working copy of the registry (closed classes plus its own finds).  With
    ``self_checking`` off, exactly one round runs.  Returns the new labels
    in discovery order (round-major).
    """
    if not target.is_closed:
        raise SimulationError(f"simulation target must be a closed class: {target.name!r}")
    templates = templates or load_templates()
    max_rounds = cfg.max_selfcheck_cycles if cfg.self_checking else 1

    working = registry
    found: list[ClassLabel] = []
    for round_index in range(1, max_rounds + 1):
        transcript = ChatTranscript(class_scope=target.canonical, round_index=round_index)
        names = working.names()
        if cfg.intermediate_reasoning:
            for prompt in build_question_chain(names, target.name, templates):
                answer = _ask(chat, transcript, prompt, target=target.name, round_index=round_index)
        else:
            prompt = templates[PromptId.NO_CHAIN].render(
                {"classes": _join_classes(names), "class": target.name}
            )
            answer = _ask(chat, transcript, prompt, target=target.name, round_index=round_index)
        if transcripts is not None:
            transcripts.append(transcript)

        candidates = parse_class_list(answer, working)
        working, rejects = working.append(candidates)
        if rejects:
            log.debug("class %s round %d rejected duplicates: %s", target.name, round_index, rejects)
        accepted = [c for c in candidates if c.name not in rejects]
        found.extend(accepted)
        if not accepted:
            break
    return found


def simulate_dissimilar(
    registry: ClassRegistry,
    chat: LLMClient,
    templates: dict[PromptId, PromptTemplate] | None = None,
    transcripts: list[ChatTranscript] | None = None,
) -> list[ClassLabel]:
    """One-shot request for classes unlike everything in the registry."""
    templates = templates or load_templates()
    prompt = templates[PromptId.DISSIMILAR].render({"classes": _join_classes(registry.names())})
    transcript = ChatTranscript(class_scope=None, round_index=1)
    answer = _ask(chat, transcript, prompt, target="<dissimilar>", round_index=1)
    if transcripts is not None:
        transcripts.append(transcript)
    return parse_class_list(answer, registry, origin=ClassOrigin.VIRTUAL_DISSIMILAR)


def simulate_all(
    registry: ClassRegistry,
    chat: LLMClient,
    cfg: SimulationConfig,
    templates: dict[PromptId, PromptTemplate] | None = None,
    *,
    parallelism: int = 4,
    transcripts: list[ChatTranscript] | None = None,
) -> ClassRegistry:
    """Expand a closed-set registry with virtual classes for every target.

    Per-class simulations run concurrently but are merged in registry
    order, so the expanded registry is independent of scheduling.  If any
    class fails, a :class:`PartialFailure` carries the registry built from
    the classes that succeeded.
    """
    if len(registry) != registry.closed_count:
        raise SimulationError("simulate_all expects a registry of closed classes only")
    templates = templates or load_templates()
    closed = registry.closed_labels()

    per_class: dict[str, list[ClassLabel]] = {}
    per_class_transcripts: dict[str, list[ChatTranscript]] = {}
    failures: dict[str, str] = {}

    def run_one(label: ClassLabel) -> list[ClassLabel]:
        sink: list[ChatTranscript] = []
        result = simulate_class(registry, label, chat, cfg, templates, transcripts=sink)
        per_class_transcripts[label.canonical] = sink
        return result

    with ThreadPoolExecutor(max_workers=max(1, parallelism)) as pool:
        futures = {label.canonical: pool.submit(run_one, label) for label in closed}
        for canonical, future in futures.items():
            try:
                per_class[canonical] = future.result()
            except (SimulationError, RegistryError) as exc:
                failures[canonical] = str(exc)

    merged = registry
    for label in closed:
        if label.canonical in per_class:
            merged, _ = merged.append(per_class[label.canonical])
        if transcripts is not None:
            transcripts.extend(per_class_transcripts.get(label.canonical, []))

    if failures:
        raise PartialFailure(
            f"simulation failed for {len(failures)} of {len(closed)} classes",
            completed=merged,
            failures=failures,
        )

    if cfg.include_dissimilar:
        dissimilar = simulate_dissimilar(merged, chat, templates, transcripts=transcripts)
        merged, _ = merged.append(dissimilar)
    return merged
