"""Benchmark item construction.

Every item is dual-view: the full frame plus a 2x-resized crop of the
region the question is about, with no grounding marks on either image. A
format policy deterministically splits items between multiple-choice (a
generated set of distractors, shuffled per item) and open answers; a
classifier assigns one of six perception dimensions.
"""

from __future__ import annotations

import hashlib
import logging
import random
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from PIL import Image

from .. import jsonl
from ..client import ChatClient, chat_with_image
from ..config import DIMENSIONS
from ..corpus import parse_json_array
from ..errors import StageError
from ..scorer import MCQ_LETTERS, McqGold, normalize_for_match
from ..synthesis import load_prompt, scaled_size

log = logging.getLogger(__name__)

FORMATS = ("mcq", "open")
STATUSES = ("pending", "promoted", "rejected")

FLAGGED_DIMENSION = "flagged"

MCQ_RETRY_PREFIX = "Respond with ONLY a JSON array of exactly three strings.\n"
MCQ_DISTINCT_PREFIX = (
    "Every option must be clearly different from the correct answer. "
    "Respond with ONLY a JSON array of exactly three strings.\n"
)
DIMENSION_RETRY_PREFIX = "Respond with exactly one label word from the list.\n"


@dataclass
class ReviewVerdict:
    annotator_id: str
    valid: bool
    difficult: bool
    correct: bool
    timestamp: float

    def all_true(self) -> bool:
        return self.valid and self.difficult and self.correct

    def to_dict(self) -> dict[str, Any]:
        return {
            "annotator_id": self.annotator_id,
            "valid": self.valid,
            "difficult": self.difficult,
            "correct": self.correct,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ReviewVerdict":
        return cls(**data)


@dataclass
class BenchItem:
    item_id: str
    image_id: str
    bbox: list[int]
    question: str
    fmt: str  # "mcq" | "open"
    answer: dict[str, str] | str  # McqGold dict for mcq, plain string for open
    options: list[str] | None
    dimension: str
    full_image: str  # path relative to the bench directory
    crop_image: str
    status: str = "pending"
    review: list[ReviewVerdict] = field(default_factory=list)

    def gold(self) -> Any:
        if self.fmt == "mcq":
            return McqGold(letter=self.answer["letter"], text=self.answer["text"])
        return self.answer

    def to_dict(self) -> dict[str, Any]:
        return {
            "item_id": self.item_id,
            "image_id": self.image_id,
            "bbox": list(self.bbox),
            "question": self.question,
            "fmt": self.fmt,
            "answer": self.answer,
            "options": list(self.options) if self.options is not None else None,
            "dimension": self.dimension,
            "full_image": self.full_image,
            "crop_image": self.crop_image,
            "status": self.status,
            "review": [v.to_dict() for v in self.review],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "BenchItem":
        review = [ReviewVerdict.from_dict(v) for v in data.get("review", [])]
        return cls(**{**data, "review": review})


def load_items(path: str | Path) -> list[BenchItem]:
    return [BenchItem.from_dict(r) for r in jsonl.read_records(Path(path))]


def save_items(path: str | Path, items: Sequence[BenchItem]) -> None:
    ordered = sorted(items, key=lambda i: i.item_id)
    jsonl.write_records_atomic(Path(path), (i.to_dict() for i in ordered))


@dataclass
class FormatPolicy:
    """Deterministic mcq/open split: a keyed hash of the item id against the
    configured fraction, so rebuilds assign formats identically."""

    mcq_fraction: float = 0.735
    n_options: int = 4

    def decide(self, qa_id: str) -> str:
        if self.mcq_fraction <= 0.0:
            return "open"
        digest = hashlib.sha256(f"fmt:{qa_id}".encode("utf-8")).digest()
        draw = int.from_bytes(digest[:8], "big") / float(1 << 64)
        return "mcq" if draw < self.mcq_fraction else "open"


def render_bench_images(
    source_path: str | Path,
    bbox: Sequence[int],
    item_id: str,
    images_dir: str | Path,
    scale_factor: float = 2.0,
) -> tuple[str, str]:
    """Write the two views for an item.

    The full view is a byte copy of the source (no overlay, hash-stable);
    the crop view is the exact region, bilinear-resized by the synthesis
    scale, re-encoded as JPEG. Returns bench-relative paths (full, crop).
    """
    images_dir = Path(images_dir)
    images_dir.mkdir(parents=True, exist_ok=True)
    full_name = f"images/{item_id}.full.jpg"
    crop_name = f"images/{item_id}.crop.jpg"
    shutil.copyfile(source_path, images_dir / f"{item_id}.full.jpg")
    x1, y1, x2, y2 = bbox
    with Image.open(source_path) as img:
        crop = img.convert("RGB").crop((x1, y1, x2, y2))
        target = scaled_size(x2 - x1, y2 - y1, scale_factor)
        if target != crop.size:
            crop = crop.resize(target, Image.Resampling.BILINEAR)
        crop.save(images_dir / f"{item_id}.crop.jpg", format="JPEG", quality=95, subsampling=0)
    return full_name, crop_name


def make_mcq(
    question: str,
    answer: str,
    item_id: str,
    distractor_client: ChatClient,
    crop_bytes: bytes | None = None,
    n_options: int = 4,
) -> tuple[list[str], McqGold] | None:
    """Build the option list for one item.

    Distractors come from a generator model and must be pairwise distinct
    from the gold answer under scorer normalization; a collision triggers
    one regeneration before falling back to the open format (None). Option
    order is shuffled with a seed derived from the item id, and the gold
    letter is recorded after the shuffle.
    """
    base_prompt = (
        load_prompt("distractor_prompt.txt")
        .replace("{question}", question)
        .replace("{answer}", answer)
    )
    distractors = _request_distractors(distractor_client, base_prompt, crop_bytes, n_options - 1)
    if distractors is not None and _collides(distractors, answer):
        log.warning("distractor collision for %s; regenerating once", item_id)
        distractors = _request_distractors(
            distractor_client, MCQ_DISTINCT_PREFIX + base_prompt, crop_bytes, n_options - 1
        )
    if distractors is None or _collides(distractors, answer):
        return None

    options = [answer] + distractors[: n_options - 1]
    seed = int.from_bytes(hashlib.sha256(f"mcq:{item_id}".encode("utf-8")).digest()[:8], "big")
    random.Random(seed).shuffle(options)
    letter = MCQ_LETTERS[options.index(answer)]
    return options, McqGold(letter=letter, text=answer)


def _request_distractors(
    client: ChatClient, prompt: str, crop_bytes: bytes | None, needed: int
) -> list[str] | None:
    for attempt_prompt in (prompt, MCQ_RETRY_PREFIX + prompt):
        text = chat_with_image(client, crop_bytes, attempt_prompt)
        items = parse_json_array(text)
        if items is None:
            continue
        options = [str(x).strip() for x in items if str(x).strip()]
        if len(options) >= needed:
            return options[:needed]
    return None


def _collides(distractors: list[str], answer: str) -> bool:
    keys = [normalize_for_match(d) for d in distractors]
    gold_key = normalize_for_match(answer)
    if gold_key in keys:
        return True
    return len(set(keys)) != len(keys)


def classify_dimension(
    question: str,
    crop_bytes: bytes | None,
    classifier: ChatClient,
) -> str:
    """Assign one of the six perception dimensions, or the flagged sentinel
    when the classifier cannot produce a usable label after one retry."""
    prompt = load_prompt("dimension_prompt.txt").replace("{question}", question)
    for attempt_prompt in (prompt, DIMENSION_RETRY_PREFIX + prompt):
        text = chat_with_image(classifier, crop_bytes, attempt_prompt)
        label = text.strip().splitlines()[-1].strip().strip(".").casefold() if text.strip() else ""
        if label in DIMENSIONS:
            return label
    log.warning("dimension classifier gave no usable label for %r", question[:60])
    return FLAGGED_DIMENSION


def build_bench_item(
    record: Any,
    source_path: str | Path,
    bbox: Sequence[int],
    qa_id: str,
    question: str,
    answer: str,
    fmt: str,
    dimension: str,
    bench_dir: str | Path,
    options: list[str] | None = None,
    gold: McqGold | None = None,
    scale_factor: float = 2.0,
) -> BenchItem:
    """Assemble one pending dual-view item from an accepted bench-partition QA."""
    if record.partition != "bench":
        raise StageError(
            f"image {record.image_id} is in partition '{record.partition}', not 'bench'"
        )
    bench_dir = Path(bench_dir)
    full_name, crop_name = render_bench_images(
        source_path, bbox, qa_id, bench_dir / "images", scale_factor
    )
    if fmt == "mcq":
        if options is None or gold is None:
            raise StageError(f"mcq item {qa_id} needs options and a gold letter")
        answer_field: dict[str, str] | str = gold.to_dict()
    else:
        answer_field = answer
    return BenchItem(
        item_id=qa_id,
        image_id=record.image_id,
        bbox=[int(v) for v in bbox],
        question=question,
        fmt=fmt,
        answer=answer_field,
        options=options,
        dimension=dimension,
        full_image=full_name,
        crop_image=crop_name,
        status="pending",
    )
