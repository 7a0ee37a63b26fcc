"""Shared fixtures and the toy end-to-end fixture builder."""

from __future__ import annotations

import sys
from pathlib import Path

import pytest

# Make sibling helper modules (oracles, toyworld) importable from any test.
sys.path.insert(0, str(Path(__file__).parent))

from openset.prompts import load_templates


@pytest.fixture(scope="session")
def templates():
    return load_templates()
