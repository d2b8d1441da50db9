"""Run a job: two decoding passes per item, one bundle directory out."""

from __future__ import annotations

import logging
from pathlib import Path

from PIL import Image, UnidentifiedImageError

from .bundles import write_bundle
from .errors import ExtractorError, JobError
from .job import ExtractionJob
from .models import build_model

log = logging.getLogger(__name__)

ATTENTION_NOTE = (
    "decoder-only: self-attention rows at the first generated answer token, "
    "restricted to image-token positions and renormalized"
)


def extract(job: ExtractionJob) -> list[Path]:
    """Extract every item in the job, sequentially, and return bundle dirs."""
    if job.decoding != "greedy":
        raise JobError(f"only greedy decoding is supported, got {job.decoding!r}")
    model = build_model(job.model_id)
    out: list[Path] = []
    for item in job.items:
        try:
            with Image.open(item.image) as img:
                size = img.size
                tokens, connector = model.image_tokens(img)
        except FileNotFoundError as exc:
            raise ExtractorError(f"item {item.item_id}: no image at {item.image}") from exc
        except UnidentifiedImageError as exc:
            raise ExtractorError(f"item {item.item_id}: {item.image} is not an image") from exc
        try:
            a_q = model.answer_attention(tokens, item.question)
            a_probe = model.answer_attention(tokens, job.generic_instruction)
        except ExtractorError as exc:
            raise ExtractorError(f"item {item.item_id}: {exc}") from exc
        bundle_dir = write_bundle(
            job.output_dir / f"{job.model_id}__{item.item_id}",
            model_id=job.model_id,
            item_id=item.item_id,
            grid_n=model.spec.grid_n,
            a_st_q=a_q,
            a_st_qprime=a_probe,
            a_ti=connector,
            extra={
                "question": item.question,
                "generic_instruction": job.generic_instruction,
                "bbox": list(item.bbox),
                "image": item.image.name,
                "image_size": [size[0], size[1]],
                "attention_note": ATTENTION_NOTE,
            },
        )
        log.info("wrote %s", bundle_dir)
        out.append(bundle_dir)
    return out
