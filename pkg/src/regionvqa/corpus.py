"""Corpus ingestion and region proposal.

An image corpus becomes a manifest of deduplicated, resolution-checked
records; a proposer (remote inventory model + segmenter, or a precomputed
annotation file) then suggests candidate regions per image, and a sparsity
filter keeps only regions whose area is a tiny fraction of the frame. Those
micro-regions are the raw material for crop-level question synthesis.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from io import BytesIO
from pathlib import Path
from typing import Any, Iterable, Protocol

from PIL import Image

from . import jsonl
from .errors import StageError

log = logging.getLogger(__name__)

IMAGE_EXTENSIONS = {".jpg", ".jpeg", ".png", ".webp", ".bmp"}

PARTITIONS = ("unassigned", "train", "bench")


@dataclass
class ImageRecord:
    image_id: str
    path: str  # "<source>/<relative path under that root>"
    width: int
    height: int
    source: str
    content_hash: str
    partition: str = "unassigned"

    def to_dict(self) -> dict[str, Any]:
        return {
            "image_id": self.image_id,
            "path": self.path,
            "width": self.width,
            "height": self.height,
            "source": self.source,
            "content_hash": self.content_hash,
            "partition": self.partition,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ImageRecord":
        return cls(**data)


@dataclass
class RegionProposal:
    box_id: str
    image_id: str
    bbox: list[int]  # [x1, y1, x2, y2], half-open, pixel coordinates
    label: str
    area_ratio: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "box_id": self.box_id,
            "image_id": self.image_id,
            "bbox": list(self.bbox),
            "label": self.label,
            "area_ratio": self.area_ratio,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RegionProposal":
        return cls(**data)


@dataclass
class Manifest:
    records: list[ImageRecord] = field(default_factory=list)

    def by_id(self) -> dict[str, ImageRecord]:
        return {r.image_id: r for r in self.records}

    def partition_records(self, partition: str) -> list[ImageRecord]:
        return [r for r in self.records if r.partition == partition]

    def save(self, path: Path) -> None:
        jsonl.write_records_atomic(path, (r.to_dict() for r in self.records))

    @classmethod
    def load(cls, path: Path) -> "Manifest":
        return cls([ImageRecord.from_dict(r) for r in jsonl.read_records(Path(path))])

    def assert_no_leakage(self) -> None:
        """No image content may appear in both train and bench."""
        seen: dict[str, str] = {}
        for record in self.records:
            if record.partition == "unassigned":
                continue
            previous = seen.setdefault(record.content_hash, record.partition)
            if previous != record.partition:
                raise StageError(
                    f"content hash {record.content_hash[:12]} appears in both "
                    f"'{previous}' and '{record.partition}' partitions"
                )


@dataclass
class IngestWarning:
    path: str
    reason: str

    def to_dict(self) -> dict[str, Any]:
        return {"path": self.path, "reason": self.reason}


@dataclass
class IngestResult:
    manifest: Manifest
    warnings: list[IngestWarning]
    excluded_small: int = 0
    duplicates: int = 0


def source_tags(roots: list[str | Path]) -> list[tuple[str, Path]]:
    """Stable (tag, root) pairs; colliding directory names get a suffix."""
    tags: list[tuple[str, Path]] = []
    used: dict[str, int] = {}
    for root in roots:
        root = Path(root)
        tag = root.name or "corpus"
        count = used.get(tag, 0)
        used[tag] = count + 1
        if count:
            tag = f"{tag}-{count + 1}"
        tags.append((tag, root))
    return tags


def resolve_image_path(record: ImageRecord, roots: list[str | Path]) -> Path:
    tag, _, rel = record.path.partition("/")
    for candidate_tag, root in source_tags(roots):
        if candidate_tag == tag:
            return Path(root) / rel
    raise StageError(f"manifest references unknown corpus root '{tag}' for {record.image_id}")


def _probe_file(tag: str, root: Path, file_path: Path) -> tuple[ImageRecord | None, IngestWarning | None]:
    rel = file_path.relative_to(root).as_posix()
    try:
        data = file_path.read_bytes()
        with Image.open(BytesIO(data)) as img:
            img.load()
            width, height = img.size
    except Exception as exc:  # noqa: BLE001 - any unreadable file is a warning, not a crash
        return None, IngestWarning(path=f"{tag}/{rel}", reason=str(exc))
    content_hash = hashlib.sha256(data).hexdigest()
    return (
        ImageRecord(
            image_id=content_hash[:16],
            path=f"{tag}/{rel}",
            width=width,
            height=height,
            source=tag,
            content_hash=content_hash,
        ),
        None,
    )


def ingest_images(roots: list[str | Path], min_dim: int = 800, workers: int = 4) -> IngestResult:
    """Scan corpus roots into a manifest.

    Files that fail to decode produce warning records. Images whose shorter
    side is under min_dim are excluded; byte-identical files collapse to one
    record (first path in scan order wins). Records are ordered by
    content_hash so repeated ingestion is byte-stable.
    """
    tagged = source_tags(roots)
    candidates: list[tuple[str, Path, Path]] = []
    for tag, root in tagged:
        if not root.is_dir():
            raise StageError(f"corpus root is not a directory: {root}")
        for file_path in sorted(root.rglob("*")):
            if file_path.is_file() and file_path.suffix.lower() in IMAGE_EXTENSIONS:
                candidates.append((tag, root, file_path))

    warnings: list[IngestWarning] = []
    probed: list[ImageRecord] = []
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        for record, warning in pool.map(lambda args: _probe_file(*args), candidates):
            if warning is not None:
                warnings.append(warning)
                log.warning("skipping unreadable image %s: %s", warning.path, warning.reason)
            elif record is not None:
                probed.append(record)

    excluded_small = 0
    by_hash: dict[str, ImageRecord] = {}
    duplicates = 0
    for record in probed:  # scan order preserved: first duplicate path wins
        if min(record.width, record.height) < min_dim:
            excluded_small += 1
            continue
        if record.content_hash in by_hash:
            duplicates += 1
            continue
        by_hash[record.content_hash] = record

    records = sorted(by_hash.values(), key=lambda r: r.content_hash)
    if not records:
        raise StageError(
            f"ingest found no usable images under {[str(r) for _, r in tagged]} "
            f"(min_dim={min_dim}, {len(warnings)} unreadable, {excluded_small} too small)"
        )
    return IngestResult(Manifest(records), warnings, excluded_small, duplicates)


def partition_for(content_hash: str, seed: int, bench_fraction: float) -> str:
    """Pure assignment: a keyed hash of (content_hash, seed) against the fraction."""
    if bench_fraction <= 0.0:
        return "train"
    digest = hashlib.sha256(f"{content_hash}:{seed}".encode("utf-8")).digest()
    draw = int.from_bytes(digest[:8], "big") / float(1 << 64)
    return "bench" if draw < bench_fraction else "train"


def split_partitions(manifest: Manifest, bench_fraction: float, seed: int) -> Manifest:
    records = [
        ImageRecord(
            image_id=r.image_id,
            path=r.path,
            width=r.width,
            height=r.height,
            source=r.source,
            content_hash=r.content_hash,
            partition=partition_for(r.content_hash, seed, bench_fraction),
        )
        for r in manifest.records
    ]
    split = Manifest(records)
    split.assert_no_leakage()
    return split


# ---------------------------------------------------------------------------
# Region proposers


class Proposer(Protocol):
    """Returns (raw region dicts, raw response for the audit log)."""

    def propose(self, image_bytes: bytes, record: ImageRecord) -> tuple[list[dict[str, Any]], Any]: ...


_JSON_ARRAY_RE = re.compile(r"\[.*\]", re.DOTALL)


def parse_json_array(text: str) -> list[Any] | None:
    """Parse a JSON array from model output, tolerating prose around it."""
    try:
        value = json.loads(text)
        return value if isinstance(value, list) else None
    except json.JSONDecodeError:
        pass
    match = _JSON_ARRAY_RE.search(text)
    if not match:
        return None
    try:
        value = json.loads(match.group(0))
        return value if isinstance(value, list) else None
    except json.JSONDecodeError:
        return None


class VlmProposer:
    """Chains an object-inventory model with a segmenter endpoint."""

    RETRY_PREFIX = "Respond with ONLY a JSON array of strings.\n"

    def __init__(self, inventory_client: Any, segmenter: Any, prompt: str):
        self.inventory_client = inventory_client
        self.segmenter = segmenter
        self.prompt = prompt

    def propose(self, image_bytes: bytes, record: ImageRecord) -> tuple[list[dict[str, Any]], Any]:
        text = self.inventory_client.chat(self.prompt, image_bytes=image_bytes)
        labels = parse_json_array(text)
        if labels is None:
            text = self.inventory_client.chat(self.RETRY_PREFIX + self.prompt, image_bytes=image_bytes)
            labels = parse_json_array(text)
        if labels is None:
            log.warning("inventory output unparseable for %s; no proposals", record.image_id)
            return [], {"inventory": text, "regions": []}
        labels = [str(l).strip() for l in labels if str(l).strip()]
        regions = self.segmenter.segment(image_bytes, labels) if labels else []
        return list(regions), {"inventory": text, "regions": regions}


class PrecomputedProposer:
    """Loads boxes from a JSON file keyed by content_hash (or image_id)."""

    def __init__(self, annotations_path: str | Path):
        self.annotations = json.loads(Path(annotations_path).read_text(encoding="utf-8"))

    def propose(self, image_bytes: bytes, record: ImageRecord) -> tuple[list[dict[str, Any]], Any]:
        items = self.annotations.get(record.content_hash) or self.annotations.get(record.image_id) or []
        return list(items), {"source": "precomputed", "count": len(items)}


class StaticProposer:
    """Test double: a fixed mapping image_id -> raw region dicts."""

    def __init__(self, regions_by_image: dict[str, list[dict[str, Any]]]):
        self.regions_by_image = regions_by_image

    def propose(self, image_bytes: bytes, record: ImageRecord) -> tuple[list[dict[str, Any]], Any]:
        items = self.regions_by_image.get(record.image_id, [])
        return list(items), {"source": "static"}


def propose_regions(
    record: ImageRecord,
    image_bytes: bytes,
    proposer: Proposer,
    max_proposals: int = 8,
    min_box_px: int = 16,
) -> tuple[list[RegionProposal], Any]:
    """Run a proposer and normalize its output.

    Boxes are clamped to image bounds; degenerate boxes, unlabeled boxes,
    and boxes smaller than min_box_px on either side are dropped. At most
    max_proposals survive, in proposer order. Returns the proposals plus the
    proposer's raw response for the audit log.
    """
    raw_items, raw_response = proposer.propose(image_bytes, record)
    proposals: list[RegionProposal] = []
    for item in raw_items:
        label = str(item.get("label", "")).strip()
        bbox = item.get("bbox")
        if not label or not bbox or len(bbox) != 4:
            continue
        x1, y1, x2, y2 = (int(round(float(v))) for v in bbox)
        x1, x2 = max(0, min(x1, record.width)), max(0, min(x2, record.width))
        y1, y2 = max(0, min(y1, record.height)), max(0, min(y2, record.height))
        if x2 <= x1 or y2 <= y1:
            continue
        if (x2 - x1) < min_box_px or (y2 - y1) < min_box_px:
            continue
        area_ratio = ((x2 - x1) * (y2 - y1)) / float(record.width * record.height)
        proposals.append(
            RegionProposal(
                box_id=f"{record.image_id}.b{len(proposals):02d}",
                image_id=record.image_id,
                bbox=[x1, y1, x2, y2],
                label=label,
                area_ratio=area_ratio,
            )
        )
        if len(proposals) >= max_proposals:
            break
    return proposals, raw_response


def sparsity_filter(proposals: Iterable[RegionProposal], tau: float = 0.1) -> list[RegionProposal]:
    """Keep exactly the proposals whose area ratio is strictly below tau."""
    return [p for p in proposals if p.area_ratio < tau]
