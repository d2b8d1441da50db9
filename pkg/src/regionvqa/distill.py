"""Re-anchoring crop-level QA onto full images, then difficulty filtering.

A QA pair earned on a zoomed crop is transformed so a student can be
trained to answer it while looking at the whole frame: either the region is
drawn into the image (red box), appended to the question as pixel
coordinates, or omitted entirely. Samples the student already answers
reliably are dropped; only questions it still gets wrong survive into the
emitted dataset.
"""

from __future__ import annotations

import json
import logging
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from PIL import Image, ImageDraw

from . import jsonl, scorer
from .client import ChatClient, DecodeParams, chat_with_image
from .config import DEFAULT_COORD_SUFFIX, DEFAULT_OVERLAY_SUFFIX, GROUNDING_VARIANTS
from .errors import UsageError
from .synthesis import TEACHER_INSTRUCTION

log = logging.getLogger(__name__)


@dataclass
class OverlayStyle:
    color: tuple[int, int, int] = (255, 0, 0)
    rel_width: float = 0.004
    min_width: int = 3

    def stroke_width(self, width: int, height: int) -> int:
        return max(self.min_width, round(self.rel_width * max(width, height)))


@dataclass
class AugmentedSample:
    sample_id: str
    image_id: str
    image_path: str
    question: str  # grounded question, begins with the original question text
    answer: str
    bbox: list[int]
    variant: str
    qa_id: str
    box_id: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "sample_id": self.sample_id,
            "image_id": self.image_id,
            "image_path": self.image_path,
            "question": self.question,
            "answer": self.answer,
            "bbox": list(self.bbox),
            "variant": self.variant,
            "qa_id": self.qa_id,
            "box_id": self.box_id,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "AugmentedSample":
        return cls(**data)


@dataclass
class DifficultyVerdict:
    sample_id: str
    trials: int
    correct: int
    kept: bool
    tiers: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "sample_id": self.sample_id,
            "trials": self.trials,
            "correct": self.correct,
            "kept": self.kept,
            "tiers": list(self.tiers),
        }


def format_box_text(bbox: Sequence[int]) -> str:
    x1, y1, x2, y2 = bbox
    return f"[{x1}, {y1}, {x2}, {y2}]"


def render_overlay(image: Image.Image, bbox: Sequence[int], style: OverlayStyle | None = None) -> Image.Image:
    """Draw the region rectangle onto a copy of the image.

    The stroke hugs the box from the inside, so every painted pixel lies
    within the half-open bbox; stroke width scales with the frame's longer
    side and never drops below the style minimum.
    """
    style = style or OverlayStyle()
    x1, y1, x2, y2 = bbox
    out = image.convert("RGB")
    if out is image:
        out = image.copy()
    draw = ImageDraw.Draw(out)
    width = style.stroke_width(*out.size)
    # PIL rectangle coordinates are inclusive; our boxes are half-open.
    draw.rectangle((x1, y1, x2 - 1, y2 - 1), outline=tuple(style.color), width=width)
    return out


def ground_to_full(
    source_path: str | Path,
    bbox: Sequence[int],
    question: str,
    answer: str,
    variant: str,
    sample_id: str,
    image_id: str,
    qa_id: str,
    box_id: str,
    out_dir: str | Path,
    style: OverlayStyle | None = None,
    overlay_suffix: str = DEFAULT_OVERLAY_SUFFIX,
    coord_suffix: str = DEFAULT_COORD_SUFFIX,
) -> AugmentedSample:
    """Produce the full-image training sample for one accepted QA.

    bbox_in_image renders the overlay and re-encodes (JPEG, quality 95);
    the other two variants copy the source bytes untouched. The grounded
    question always starts with the original question string; variant
    suffixes are appended after a single space.
    """
    if variant not in GROUNDING_VARIANTS:
        raise UsageError(f"unknown grounding variant {variant!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / f"{sample_id}.jpg"

    if variant == "bbox_in_image":
        with Image.open(source_path) as img:
            rendered = render_overlay(img, bbox, style)
        rendered.save(out_path, format="JPEG", quality=95, subsampling=0)
        grounded_question = f"{question} {overlay_suffix}"
    else:
        shutil.copyfile(source_path, out_path)
        if variant == "bbox_in_question":
            suffix = coord_suffix.replace("{box}", format_box_text(bbox))
            grounded_question = f"{question} {suffix}"
        else:
            grounded_question = question

    return AugmentedSample(
        sample_id=sample_id,
        image_id=image_id,
        image_path=str(out_path),
        question=grounded_question,
        answer=answer,
        bbox=[int(v) for v in bbox],
        variant=variant,
        qa_id=qa_id,
        box_id=box_id,
    )


def difficulty_filter(
    sample: AugmentedSample,
    image_bytes: bytes,
    student: ChatClient,
    judge_client: ChatClient | None = None,
    trials: int = 4,
    max_correct: int = 2,
    temperature: float = 1.0,
) -> DifficultyVerdict:
    """Keep a sample only if the student still struggles with it.

    The student answers the grounded question `trials` times (distinct
    decode seeds); each response is scored with the full tiered scorer and
    the tier per trial is recorded. Kept iff correct <= max_correct. A
    transport failure on any trial propagates: the caller must park the
    sample rather than guessing a verdict.
    """
    prompt = f"{sample.question}\n{TEACHER_INSTRUCTION}"
    correct = 0
    tiers: list[str] = []
    for trial in range(trials):
        decode = DecodeParams(temperature=temperature, max_tokens=64, seed=trial)
        response = chat_with_image(student, image_bytes, prompt, decode)
        record = scorer.score(
            sample.question, sample.answer, response, fmt="open", judge_client=judge_client
        )
        tiers.append(record.tier)
        correct += record.score
    return DifficultyVerdict(
        sample_id=sample.sample_id,
        trials=trials,
        correct=correct,
        kept=correct <= max_correct,
        tiers=tiers,
    )


def emit_dataset(
    samples: list[AugmentedSample],
    out_dir: str | Path,
    config_sha256: str = "",
    seed: int = 0,
    parked: int = 0,
    dropped: int = 0,
) -> dict[str, Any]:
    """Write the final dataset: data.jsonl, images/, and a manifest.

    Ordering is by sample_id and serialization is stable, so re-emitting
    the same inputs is byte-identical. Image files are copied from the
    grounding stage untouched to keep their hashes stable.
    """
    out_dir = Path(out_dir)
    images_dir = out_dir / "images"
    images_dir.mkdir(parents=True, exist_ok=True)

    ordered = sorted(samples, key=lambda s: s.sample_id)
    by_variant: dict[str, int] = {}
    rows = []
    for sample in ordered:
        target = images_dir / f"{sample.sample_id}.jpg"
        source = Path(sample.image_path)
        if source.resolve() != target.resolve():
            shutil.copyfile(source, target)
        by_variant[sample.variant] = by_variant.get(sample.variant, 0) + 1
        rows.append(
            {
                "sample_id": sample.sample_id,
                "image": f"images/{sample.sample_id}.jpg",
                "question": sample.question,
                "answer": sample.answer,
                "bbox": list(sample.bbox),
                "variant": sample.variant,
                "provenance": {
                    "image_id": sample.image_id,
                    "box_id": sample.box_id,
                    "qa_id": sample.qa_id,
                },
            }
        )
    jsonl.write_records_atomic(out_dir / "data.jsonl", rows)

    manifest = {
        "samples": len(ordered),
        "by_variant": dict(sorted(by_variant.items())),
        "dropped_easy": dropped,
        "parked": parked,
        "config_sha256": config_sha256,
        "seed": seed,
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return manifest
