"""Crop-level question synthesis and teacher consensus.

Micro-regions are cropped (with a fixed upscale so teachers see detail),
a generator model writes questions for each crop, an ensemble of teacher
models answers every question several times, and only answers backed by an
overwhelming majority of samples survive as pseudo-labels. Operations here
work on crops only; re-anchoring answers to the full image happens in the
distill module.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from PIL import Image

from .client import ChatClient, DecodeParams, chat_with_image
from .corpus import parse_json_array

log = logging.getLogger(__name__)

# Teachers are answer samplers, not explainers; a short-phrase instruction
# keeps raw samples comparable under normalization.
TEACHER_INSTRUCTION = (
    "Look carefully at the image and answer with a single short phrase "
    "(a few words at most). Do not explain."
)

QUESTION_RETRY_PREFIX = "Return ONLY the JSON array in the exact format requested. No other text.\n"

_PROMPTS_DIR = Path(__file__).parent / "prompts"


def load_prompt(name: str) -> str:
    return (_PROMPTS_DIR / name).read_text(encoding="utf-8")


def question_gen_prompt(exemplars: str | None = None) -> str:
    template = load_prompt("question_gen_prompt.txt")
    if exemplars is None:
        exemplars = load_prompt("question_exemplars.txt").strip()
    # The template contains literal JSON braces, so substitution is a plain
    # string replace rather than str.format.
    return template.replace("{examples_str}", exemplars)


@dataclass
class CropSpec:
    box_id: str
    crop_path: str
    scale_factor: float
    crop_width: int
    crop_height: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "box_id": self.box_id,
            "crop_path": self.crop_path,
            "scale_factor": self.scale_factor,
            "crop_width": self.crop_width,
            "crop_height": self.crop_height,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "CropSpec":
        return cls(**data)


@dataclass
class AnswerSample:
    teacher_id: str
    sample_index: int
    raw_text: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "teacher_id": self.teacher_id,
            "sample_index": self.sample_index,
            "raw_text": self.raw_text,
        }


@dataclass
class ConsensusResult:
    accepted: bool
    label: str | None
    majority_count: int
    total: int


@dataclass
class SynthesizedQA:
    qa_id: str
    box_id: str
    image_id: str
    question: str
    answer: str | None
    accepted: bool
    majority_count: int
    total_samples: int
    samples: list[AnswerSample] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "qa_id": self.qa_id,
            "box_id": self.box_id,
            "image_id": self.image_id,
            "question": self.question,
            "answer": self.answer,
            "accepted": self.accepted,
            "majority_count": self.majority_count,
            "total_samples": self.total_samples,
            "samples": [s.to_dict() for s in self.samples],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SynthesizedQA":
        samples = [AnswerSample(**s) for s in data.get("samples", [])]
        return cls(**{**data, "samples": samples})


def scaled_size(width: int, height: int, scale_factor: float) -> tuple[int, int]:
    """Output crop size: each side is ceil(side * scale_factor)."""
    return math.ceil(width * scale_factor), math.ceil(height * scale_factor)


def crop_region(
    image_path: str | Path,
    bbox: Sequence[int],
    scale_factor: float,
    box_id: str,
    out_dir: str | Path,
) -> CropSpec:
    """Cut the region out of the image and upscale it.

    The crop uses half-open box coordinates. A scale factor of 1 is a pure
    byte-level crop with no resampling; otherwise bilinear resampling
    produces a crop of ceil(box_side * scale) per side. Crops are stored as
    PNG so later consumers see exactly the produced pixels.
    """
    x1, y1, x2, y2 = bbox
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / f"{box_id}.png"
    with Image.open(image_path) as img:
        crop = img.convert("RGB").crop((x1, y1, x2, y2))
        target = scaled_size(x2 - x1, y2 - y1, scale_factor)
        if target != crop.size:
            crop = crop.resize(target, Image.Resampling.BILINEAR)
        crop.save(out_path, format="PNG")
        width, height = crop.size
    return CropSpec(
        box_id=box_id,
        crop_path=str(out_path),
        scale_factor=scale_factor,
        crop_width=width,
        crop_height=height,
    )


def generate_questions(
    crop_bytes: bytes,
    generator: ChatClient,
    k: int = 3,
    prompt: str | None = None,
) -> list[str] | None:
    """Ask the generator for up to k questions about a crop.

    The generator must return a JSON array of {"question": ...} objects.
    Malformed output triggers exactly one stricter re-prompt; if that also
    fails the caller gets None and should mark the crop synthesis-failed.
    An empty array is a valid "nothing worth asking" outcome.
    """
    prompt = prompt if prompt is not None else question_gen_prompt()
    text = chat_with_image(generator, crop_bytes, prompt)
    questions = _parse_questions(text)
    if questions is None:
        text = chat_with_image(generator, crop_bytes, QUESTION_RETRY_PREFIX + prompt)
        questions = _parse_questions(text)
        if questions is None:
            log.warning("question generator output unparseable after retry")
            return None
    return questions[:k]


def _parse_questions(text: str) -> list[str] | None:
    items = parse_json_array(text)
    if items is None:
        return None
    questions: list[str] = []
    for item in items:
        if not isinstance(item, dict) or not isinstance(item.get("question"), str):
            return None
        question = item["question"].strip()
        if not question:
            return None
        questions.append(question)
    return questions


def sample_answers(
    crop_bytes: bytes,
    question: str,
    teachers: Sequence[ChatClient],
    samples_per_teacher: int = 4,
    temperature: float = 1.0,
    max_tokens: int = 64,
) -> list[AnswerSample]:
    """Collect every teacher's answer samples for one question.

    Produces exactly len(teachers) * samples_per_teacher samples; each
    sample carries a distinct decode seed so repeated draws are real
    samples, not cache hits. A transport failure propagates after the
    client's retries: the caller discards the whole QA rather than padding.
    """
    prompt = f"{question}\n{TEACHER_INSTRUCTION}"
    samples: list[AnswerSample] = []
    for teacher_index, teacher in enumerate(teachers):
        for draw in range(samples_per_teacher):
            global_index = teacher_index * samples_per_teacher + draw
            decode = DecodeParams(temperature=temperature, max_tokens=max_tokens, seed=global_index)
            text = chat_with_image(teacher, crop_bytes, prompt, decode)
            samples.append(
                AnswerSample(
                    teacher_id=teacher.endpoint.endpoint_id,
                    sample_index=global_index,
                    raw_text=text,
                )
            )
    return samples


def normalize_answer(text: str) -> str:
    """Equivalence key for consensus grouping: case-folded, whitespace
    collapsed, terminal punctuation stripped."""
    collapsed = " ".join(text.split()).casefold()
    return collapsed.rstrip(".!?,;:").strip()


def consensus(samples: Sequence[AnswerSample], threshold: int = 6) -> ConsensusResult:
    """Strict majority vote over normalized answer samples.

    Samples are grouped by normalized equality; the vote is accepted only
    when the largest group's size strictly exceeds `threshold` (an integer
    comparison, so the default 6 with eight samples means at least 7 must
    agree). The surviving label is the most frequent raw form inside the
    majority group; remaining ties go to the earliest sample in canonical
    (teacher_id, sample_index) order, which makes the result independent of
    the order samples are passed in.
    """
    ordered = sorted(samples, key=lambda s: (s.teacher_id, s.sample_index))
    total = len(ordered)
    if total == 0:
        return ConsensusResult(accepted=False, label=None, majority_count=0, total=0)

    groups: dict[str, list[AnswerSample]] = {}
    for sample in ordered:
        groups.setdefault(normalize_answer(sample.raw_text), []).append(sample)

    first_position = {id(s): i for i, s in enumerate(ordered)}
    majority = max(groups.values(), key=lambda g: (len(g), -first_position[id(g[0])]))
    majority_count = len(majority)
    accepted = majority_count > threshold
    label: str | None = None
    if accepted:
        raw_counts: dict[str, int] = {}
        for sample in majority:
            raw_counts[sample.raw_text] = raw_counts.get(sample.raw_text, 0) + 1
        best = max(raw_counts.values())
        # Earliest canonical sample among the top raw forms wins.
        label = next(s.raw_text for s in majority if raw_counts[s.raw_text] == best)
    return ConsensusResult(accepted=accepted, label=label, majority_count=majority_count, total=total)
