"""Extraction job files.

A job is a JSON document naming one model, one output directory, and a
list of items to run. The generic probe instruction is a single job-level
field, so every item in a job is guaranteed to share it; items cannot
override it. Relative paths (images, output directory) resolve against
the job file's own directory so a job stays valid wherever it is invoked
from.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .errors import JobError

DEFAULT_INSTRUCTION = "Write a general description of the image."

_ITEM_KEYS = {"item_id", "image", "question", "bbox"}
_JOB_KEYS = {"model_id", "output_dir", "items", "generic_instruction", "decoding"}


@dataclass(frozen=True)
class JobItem:
    item_id: str
    image: Path
    question: str
    bbox: tuple[int, int, int, int]


@dataclass(frozen=True)
class ExtractionJob:
    model_id: str
    output_dir: Path
    items: tuple[JobItem, ...]
    generic_instruction: str = DEFAULT_INSTRUCTION
    decoding: str = "greedy"


def _require_str(raw: dict[str, Any], key: str, where: str) -> str:
    value = raw.get(key)
    if not isinstance(value, str) or not value.strip():
        raise JobError(f"{where}: {key!r} must be a non-empty string")
    return value


def _parse_item(raw: Any, index: int, base: Path) -> JobItem:
    where = f"items[{index}]"
    if not isinstance(raw, dict):
        raise JobError(f"{where}: expected a mapping")
    unknown = set(raw) - _ITEM_KEYS
    if unknown:
        raise JobError(f"{where}: unknown keys {sorted(unknown)}")
    missing = _ITEM_KEYS - set(raw)
    if missing:
        raise JobError(f"{where}: missing keys {sorted(missing)}")
    bbox = raw["bbox"]
    if (
        not isinstance(bbox, list)
        or len(bbox) != 4
        or not all(isinstance(v, int) and not isinstance(v, bool) for v in bbox)
    ):
        raise JobError(f"{where}: bbox must be four integers [x1, y1, x2, y2]")
    x1, y1, x2, y2 = bbox
    if x1 >= x2 or y1 >= y2:
        raise JobError(f"{where}: bbox {bbox} is empty")
    image = Path(_require_str(raw, "image", where))
    if not image.is_absolute():
        image = base / image
    return JobItem(
        item_id=_require_str(raw, "item_id", where),
        image=image,
        question=_require_str(raw, "question", where),
        bbox=(x1, y1, x2, y2),
    )


def load_job(path: str | Path) -> ExtractionJob:
    """Parse and validate one job file."""
    path = Path(path)
    if not path.exists():
        raise JobError(f"no job file at {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise JobError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise JobError(f"{path}: top level must be a mapping")
    unknown = set(raw) - _JOB_KEYS
    if unknown:
        raise JobError(f"{path}: unknown keys {sorted(unknown)}")

    base = path.parent
    model_id = _require_str(raw, "model_id", str(path))
    out = Path(_require_str(raw, "output_dir", str(path)))
    if not out.is_absolute():
        out = base / out

    decoding = raw.get("decoding", "greedy")
    if decoding != "greedy":
        raise JobError(f"only greedy decoding is supported, got {decoding!r}")

    instruction = raw.get("generic_instruction", DEFAULT_INSTRUCTION)
    if not isinstance(instruction, str) or not instruction.strip():
        raise JobError(f"{path}: generic_instruction must be a non-empty string")

    items_raw = raw.get("items")
    if not isinstance(items_raw, list) or not items_raw:
        raise JobError(f"{path}: items must be a non-empty list")
    items = tuple(_parse_item(entry, i, base) for i, entry in enumerate(items_raw))
    seen: dict[str, int] = {}
    for i, item in enumerate(items):
        if item.item_id in seen:
            raise JobError(
                f"duplicate item_id {item.item_id!r} at items[{seen[item.item_id]}] and items[{i}]"
            )
        seen[item.item_id] = i

    return ExtractionJob(
        model_id=model_id,
        output_dir=out,
        items=items,
        generic_instruction=instruction,
        decoding=decoding,
    )
