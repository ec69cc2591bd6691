"""Output files: comment-prefixed metadata headers, strict CSV bodies, atomic writes."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from . import __version__


def fmt(x) -> str:
    """Float with 17 significant digits (round-trips exactly); ints as ints."""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    if isinstance(x, str):
        return x
    return f"{float(x):.17g}"


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def to_json(obj, **kw) -> str:
    return json.dumps(obj, default=_jsonable, **kw)


def metadata_header(meta: dict[str, Any] | None) -> str:
    lines = [f"# tool: noisyrate {__version__}"]
    for key, value in (meta or {}).items():
        lines.append(f"# {key}: {to_json(value)}")
    return "\n".join(lines) + "\n"


def atomic_write_text(path: str | Path, text: str) -> Path:
    """Write ``text`` to a temporary sibling file, then rename it over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_csv(
    path: str | Path,
    header: Sequence[str],
    rows: Iterable[Sequence],
    meta: dict[str, Any] | None = None,
) -> Path:
    buf = io.StringIO()
    buf.write(metadata_header(meta))
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(x) for x in row])
    return atomic_write_text(path, buf.getvalue())


def write_json(path: str | Path, obj, meta: dict[str, Any] | None = None) -> Path:
    doc = dict(obj)
    if meta is not None:
        doc = {"metadata": {"tool": f"noisyrate {__version__}", **meta}, **doc}
    return atomic_write_text(path, to_json(doc, indent=2) + "\n")


def read_csv(path: str | Path) -> tuple[list[str], list[list[str]]]:
    """Header and rows of a CSV written by :func:`write_csv`, skipping ``#`` lines."""
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader)
    return header, [row for row in reader]


def read_header_metadata(path: str | Path) -> dict[str, Any]:
    meta = {}
    with open(path) as fh:
        for ln in fh:
            if not ln.startswith("#"):
                break
            key, _, value = ln[1:].strip().partition(": ")
            try:
                meta[key] = json.loads(value)
            except json.JSONDecodeError:
                meta[key] = value
    return meta
