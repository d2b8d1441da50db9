"""Line-oriented JSON persistence with crash-tolerant appends.

Every durable pipeline artifact is a JSONL file. Appends flush per record so
an interrupted run leaves at worst one truncated tail line, which readers
drop. Field order in each record follows insertion order of the dict, so
byte-for-byte reproducibility holds as long as callers build dicts in a
fixed order.
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Any, Iterable, Iterator

log = logging.getLogger(__name__)


def dumps(record: dict[str, Any]) -> str:
    return json.dumps(record, ensure_ascii=False, separators=(", ", ": "))


def iter_records(path: Path) -> Iterator[dict[str, Any]]:
    """Yield records from a JSONL file, tolerating a truncated final line."""
    with open(path, "r", encoding="utf-8") as handle:
        pending = None
        for line_no, line in enumerate(handle, start=1):
            if pending is not None:
                # A mid-file bad line is corruption, not a crash artifact.
                raise ValueError(f"{path}:{pending} is not valid JSON")
            stripped = line.strip()
            if not stripped:
                continue
            try:
                yield json.loads(stripped)
            except json.JSONDecodeError:
                pending = line_no
        if pending is not None:
            log.warning("dropping truncated tail line %d of %s", pending, path)


def read_records(path: Path) -> list[dict[str, Any]]:
    if not Path(path).exists():
        return []
    return list(iter_records(Path(path)))


def append_record(path: Path, record: dict[str, Any]) -> None:
    """Append one record and flush it to disk before returning."""
    trim_partial_tail(path)
    with open(path, "a", encoding="utf-8") as handle:
        handle.write(dumps(record) + "\n")
        handle.flush()
        os.fsync(handle.fileno())


def trim_partial_tail(path: Path) -> None:
    """Drop a dangling final line left by a crash mid-append.

    Appending after the fragment would glue two records into one unparseable
    line, so writers must trim before reopening a file for append. Readers
    already ignore the fragment, so trimming keeps them consistent.
    """
    path = Path(path)
    if not path.exists():
        return
    with open(path, "rb+") as handle:
        data = handle.read()
        if not data or data.endswith(b"\n"):
            return
        handle.truncate(data.rfind(b"\n") + 1)
    log.warning("trimmed partial tail line of %s", path)


class JsonlWriter:
    """Keeps one file handle open for a stage's worth of flushed appends."""

    def __init__(self, path: Path):
        self.path = Path(path)
        trim_partial_tail(self.path)
        self._handle = open(self.path, "a", encoding="utf-8")

    def append(self, record: dict[str, Any]) -> None:
        self._handle.write(dumps(record) + "\n")
        self._handle.flush()

    def close(self) -> None:
        os.fsync(self._handle.fileno())
        self._handle.close()

    def __enter__(self) -> "JsonlWriter":
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()


def write_records_atomic(path: Path, records: Iterable[dict[str, Any]]) -> None:
    """Write a complete JSONL file via rename so readers never see a partial file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            for record in records:
                handle.write(dumps(record) + "\n")
            handle.flush()
            os.fsync(handle.fileno())
        os.replace(tmp_name, path)
    finally:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)


def done_keys(path: Path, key_field: str) -> set[str]:
    """Set of key values already present in a (possibly partial) stage output."""
    return {record[key_field] for record in read_records(path)}
