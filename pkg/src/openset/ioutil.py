"""Small filesystem helpers shared by the pipeline stages.

All artifacts are written atomically (temp file in the target directory,
then ``os.replace``) so a crashed run never leaves a half-written file, and
reruns that produce identical content produce byte-identical files.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Any, Iterable, Iterator


def write_bytes_atomic(path: Path | str, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def write_text_atomic(path: Path | str, text: str) -> None:
    write_bytes_atomic(path, text.encode("utf-8"))


def dump_json(obj: Any, *, sort_keys: bool = False) -> str:
    """Serialize to pretty JSON with a trailing newline.

    Output is deterministic for a given object; pass ``sort_keys=True`` when
    the dict insertion order is itself not canonical.
    """
    return json.dumps(obj, indent=2, ensure_ascii=False, sort_keys=sort_keys) + "\n"


def write_json_atomic(path: Path | str, obj: Any, *, sort_keys: bool = False) -> None:
    write_text_atomic(path, dump_json(obj, sort_keys=sort_keys))


def dump_jsonl(rows: Iterable[dict]) -> str:
    lines = [json.dumps(row, ensure_ascii=False, separators=(",", ":")) for row in rows]
    return "".join(line + "\n" for line in lines)


def write_jsonl_atomic(path: Path | str, rows: Iterable[dict]) -> None:
    write_text_atomic(path, dump_jsonl(rows))


def read_jsonl(path: Path | str) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)
