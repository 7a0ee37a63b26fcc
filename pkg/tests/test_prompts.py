"""Template loading and rendering behavior."""

from __future__ import annotations

import pytest

from openset.errors import TemplateError
from openset.prompts import PromptId, PromptTemplate, load_templates


def test_defaults_cover_every_id(templates):
    assert set(templates) == set(PromptId)
    for template in templates.values():
        assert template.body


def test_question_chain_wording(templates):
    q1 = templates[PromptId.DESCRIBE_ALL].render({"classes": "ox, gazelle"})
    assert q1 == (
        "Given a list of classes ox, gazelle, can you describe the visual features "
        "of each class in the list?"
    )
    q2 = templates[PromptId.DISCRIMINATIVE].render({"class": "ox"})
    assert q2 == (
        "What are the discriminative visual features of class ox compared with "
        "other classes in the list?"
    )
    q3 = templates[PromptId.SHARED_CLASSES].render({})
    assert q3.startswith("Can you list other classes that also share these discriminative")
    # The machine-readable output instruction is part of the template.
    assert "prefixed by '- '" in q3


def test_description_prompt_carries_count(templates):
    prompt = templates[PromptId.DESCRIPTIONS].render({"K": 10, "class": "sparrow"})
    assert "10 diverse descriptions" in prompt
    assert "the class sparrow" in prompt
    assert "exactly 10 items" in prompt


def test_refine_prompt_names_both_classes(templates):
    prompt = templates[PromptId.REFINE].render(
        {"desc": "a small bird", "confused": "finch", "target": "sparrow"}
    )
    assert '"a small bird"' in prompt
    assert "more like class finch" in prompt
    assert "characteristics of class sparrow" in prompt


def test_naive_refine_prompt_never_names_the_confusion(templates):
    prompt = templates[PromptId.NAIVE_REFINE].render(
        {"desc": "a small bird", "target": "sparrow"}
    )
    assert "sparrow" in prompt and "finch" not in prompt
    assert "{confused}" not in prompt


def test_unbound_placeholder_raises(templates):
    with pytest.raises(TemplateError, match="classes"):
        templates[PromptId.DESCRIBE_ALL].render({})


def test_extra_bindings_are_fine(templates):
    templates[PromptId.SHARED_CLASSES].render({"anything": 1})


def test_custom_file_overrides_single_id(tmp_path):
    custom = tmp_path / "prompts.txt"
    custom.write_text("[q3_shared_classes]\nName the lookalikes of {class}.\n")
    templates = load_templates(custom)
    assert templates[PromptId.SHARED_CLASSES].body == "Name the lookalikes of {class}."
    # Everything else keeps the default wording.
    assert "diverse descriptions" in templates[PromptId.DESCRIPTIONS].body


def test_unknown_id_rejected(tmp_path):
    bad = tmp_path / "prompts.txt"
    bad.write_text("[q_mystery]\nwho knows\n")
    with pytest.raises(TemplateError, match="q_mystery"):
        load_templates(bad)


def test_duplicate_id_rejected(tmp_path):
    bad = tmp_path / "prompts.txt"
    bad.write_text("[q_refine]\na\n[q_refine]\nb\n")
    with pytest.raises(TemplateError, match="duplicate"):
        load_templates(bad)


def test_stray_text_rejected(tmp_path):
    bad = tmp_path / "prompts.txt"
    bad.write_text("hello\n[q_refine]\na\n")
    with pytest.raises(TemplateError, match="before first"):
        load_templates(bad)


def test_placeholder_discovery():
    template = PromptTemplate(id=PromptId.REFINE, body="{a} and {b}")
    assert template.placeholders() == {"a", "b"}
