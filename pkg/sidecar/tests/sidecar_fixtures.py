"""Tiny PNG builders shared by the sidecar tests."""

from __future__ import annotations

import io

import numpy as np
from PIL import Image
from PIL.PngImagePlugin import PngInfo


def captioned_png(caption: str, color: tuple[int, int, int] = (200, 30, 30)) -> bytes:
    """Solid-color PNG carrying a ``caption`` text chunk."""
    img = Image.new("RGB", (16, 16), color)
    info = PngInfo()
    info.add_text("caption", caption)
    buf = io.BytesIO()
    img.save(buf, "PNG", pnginfo=info)
    return buf.getvalue()


def plain_png(color: tuple[int, int, int] = (10, 120, 10)) -> bytes:
    img = Image.new("RGB", (16, 16), color)
    buf = io.BytesIO()
    img.save(buf, "PNG")
    return buf.getvalue()


def cosine(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))
