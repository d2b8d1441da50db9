"""Two-tier answer scoring.

Tier one is a cheap rule check: normalized exact match or numeric equality.
It can only say "correct" or abstain; it never declares an answer wrong,
because surface mismatch proves nothing. Whatever the rule tier cannot
decide goes to an LLM judge that sees the question, the gold answer, and
the model's response, and must answer inside \\boxed{}. Every score records
which tier produced it.
"""

from __future__ import annotations

import hashlib
import logging
import re
import string
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Union

from .client import ChatClient
from .errors import JudgeOutputError, UsageError

log = logging.getLogger(__name__)

_PROMPTS_DIR = Path(__file__).parent / "prompts"

# Guards the judge template against accidental edits: scoring semantics are
# only comparable across runs if the prompt bytes stay fixed.
JUDGE_PROMPT_SHA256 = "c7421dd920366c050f34c167ccadf0cffbb2d47629f518237e3ecd2ef20c1d9f"

MCQ_LETTERS = "ABCDEFGHIJ"

_LETTER_RE = re.compile(r"^\(?([A-Ja-j])[\)\.:]?$")
_ANSWER_TAG_RE = re.compile(r"answer\s*(?:is|:)\s*\(?([A-Ja-j])\b[\)\.:]?", re.IGNORECASE)
_BOXED_VERDICT_RE = re.compile(r"\\boxed\{\s*(yes|no)\s*\}", re.IGNORECASE)

_PUNCT_TABLE = str.maketrans({c: " " for c in string.punctuation})


@dataclass
class McqGold:
    """Gold answer for a multiple-choice item: letter plus option text."""

    letter: str
    text: str

    def display(self) -> str:
        return f"{self.letter}. {self.text}"

    def to_dict(self) -> dict[str, str]:
        return {"letter": self.letter, "text": self.text}


Gold = Union[str, McqGold]


@dataclass
class ScoreRecord:
    score: int  # 1 correct, 0 incorrect
    tier: str  # "rule" or "judge"
    extracted: str

    def to_dict(self) -> dict[str, Any]:
        return {"score": self.score, "tier": self.tier, "extracted": self.extracted}


def load_judge_template() -> str:
    return (_PROMPTS_DIR / "judge_prompt.txt").read_text(encoding="utf-8")


def judge_template_checksum() -> str:
    return hashlib.sha256((_PROMPTS_DIR / "judge_prompt.txt").read_bytes()).hexdigest()


def render_judge_prompt(question: str, gold: str, response: str, template: str | None = None) -> str:
    """Fill the judge template. Plain replacement keeps the template's own
    braces (the \\boxed{} instruction) intact."""
    template = template if template is not None else load_judge_template()
    return (
        template.replace("{question}", question)
        .replace("{gt}", gold)
        .replace("{response}", response)
    )


def last_boxed(text: str) -> str | None:
    """Content of the final \\boxed{...} span, honoring nested braces."""
    marker = "\\boxed{"
    start = text.rfind(marker)
    if start < 0:
        return None
    depth = 1
    pos = start + len(marker)
    for i in range(pos, len(text)):
        if text[i] == "{":
            depth += 1
        elif text[i] == "}":
            depth -= 1
            if depth == 0:
                return text[pos:i]
    return None


def _tail_line(text: str) -> str:
    for line in reversed(text.splitlines()):
        if line.strip():
            return line.strip()
    return text.strip()


def _as_letter(text: str) -> str | None:
    match = _LETTER_RE.match(text.strip())
    return match.group(1).upper() if match else None


def extract_answer(response: str, fmt: str = "open") -> str:
    """Pull the answer span out of a free-form model response.

    Multiple choice: return the option letter when any conventional marker
    pins it down (boxed content, an "Answer: X" tag, or a lone-letter tail
    line); otherwise fall back to the trimmed tail line so the scorer can
    still try to match option text. Open format: boxed content if present,
    else the last non-empty line.
    """
    boxed = last_boxed(response)
    if fmt == "mcq":
        if boxed is not None:
            letter = _as_letter(boxed)
            if letter:
                return letter
        tag_matches = _ANSWER_TAG_RE.findall(response)
        if tag_matches:
            return tag_matches[-1].upper()
        tail = _tail_line(response)
        letter = _as_letter(tail)
        if letter:
            return letter
        if boxed is not None:
            return boxed.strip()
        return tail
    if boxed is not None:
        return boxed.strip()
    return _tail_line(response)


def normalize_for_match(text: str) -> str:
    """Case-, whitespace-, and punctuation-insensitive comparison key."""
    return " ".join(text.casefold().translate(_PUNCT_TABLE).split())


def parse_number(text: str) -> float | None:
    cleaned = text.strip().replace(",", "")
    try:
        return float(cleaned)
    except ValueError:
        return None


def numbers_equal(a: float, b: float, rel_tol: float = 1e-9) -> bool:
    return abs(a - b) <= rel_tol * max(1.0, abs(a), abs(b))


def rule_match(extracted: str, gold: Gold, fmt: str = "open") -> int | None:
    """Rule tier: 1 when the extracted answer provably matches gold, else
    None (no decision). By construction this tier never returns 0."""
    if isinstance(gold, McqGold):
        key = normalize_for_match(extracted)
        candidates = {
            normalize_for_match(gold.letter),
            normalize_for_match(gold.text),
            normalize_for_match(gold.display()),
        }
        if key and key in candidates:
            return 1
        extracted_num, gold_num = parse_number(extracted), parse_number(gold.text)
        if extracted_num is not None and gold_num is not None and numbers_equal(extracted_num, gold_num):
            return 1
        return None
    left, right = normalize_for_match(extracted), normalize_for_match(str(gold))
    if left and left == right:
        return 1
    left_num, right_num = parse_number(extracted), parse_number(str(gold))
    if left_num is not None and right_num is not None and numbers_equal(left_num, right_num):
        return 1
    return None


def judge(
    question: str,
    gold: str,
    response: str,
    judge_client: ChatClient,
    template: str | None = None,
) -> int:
    """Ask the judge for a \\boxed{Yes}/\\boxed{No} verdict.

    An unparseable verdict is retried exactly once with the same prompt;
    a second failure is a hard error rather than a silent zero.
    """
    prompt = render_judge_prompt(question, gold, response, template)
    for attempt in range(2):
        text = judge_client.chat(prompt)
        match = _BOXED_VERDICT_RE.search(text)
        if match:
            return 1 if match.group(1).casefold() == "yes" else 0
        log.warning("judge verdict unparseable (attempt %d): %r", attempt + 1, text[:120])
    raise JudgeOutputError(
        f"judge returned no parseable \\boxed{{Yes|No}} verdict after retry for question {question[:60]!r}"
    )


def gold_text(gold: Gold) -> str:
    return gold.display() if isinstance(gold, McqGold) else str(gold)


def score(
    question: str,
    gold: Gold,
    response: str,
    fmt: str = "open",
    judge_client: ChatClient | None = None,
    template: str | None = None,
) -> ScoreRecord:
    """Score a response: rule tier first, judge only when the rule abstains."""
    extracted = extract_answer(response, fmt)
    decision = rule_match(extracted, gold, fmt)
    if decision is not None:
        return ScoreRecord(score=decision, tier="rule", extracted=extracted)
    if judge_client is None:
        raise UsageError("rule tier abstained and no judge endpoint is configured")
    verdict = judge(question, gold_text(gold), response, judge_client, template)
    return ScoreRecord(score=verdict, tier="judge", extracted=extracted)
