"""Dual-view evaluation and the per-dimension accuracy gap.

Each promoted item is asked twice with an identical prompt and identical
decode settings: once with the full frame (global view), once with the
enlarged crop (regional view). The regional-minus-global accuracy gap, per
dimension and overall, quantifies how much of a model's failure is seeing
rather than knowing.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from .. import jsonl, scorer
from ..client import ChatClient, DecodeParams, chat_with_image
from ..config import DIMENSIONS
from ..errors import StageError, TransportError
from ..scorer import MCQ_LETTERS
from .items import BenchItem

log = logging.getLogger(__name__)

VIEW_GLOBAL = "global"
VIEW_REGIONAL = "regional"

OPEN_EVAL_INSTRUCTION = "Answer with a single short phrase."
MCQ_EVAL_INSTRUCTION = "Answer with the option letter only."


@dataclass
class EvalRecord:
    item_id: str
    view: str
    model_id: str
    response: str
    extracted: str
    score: int | None  # None when the request failed
    tier: str | None
    failed: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "item_id": self.item_id,
            "view": self.view,
            "model_id": self.model_id,
            "response": self.response,
            "extracted": self.extracted,
            "score": self.score,
            "tier": self.tier,
            "failed": self.failed,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "EvalRecord":
        return cls(**data)


def eval_prompt(item: BenchItem) -> str:
    """The question as posed to the evaluated model; identical for both views."""
    if item.fmt == "mcq":
        assert item.options is not None
        lines = [item.question]
        lines.extend(f"{MCQ_LETTERS[i]}. {opt}" for i, opt in enumerate(item.options))
        lines.append(MCQ_EVAL_INSTRUCTION)
        return "\n".join(lines)
    return f"{item.question}\n{OPEN_EVAL_INSTRUCTION}"


def run_dual_view(
    items: Sequence[BenchItem],
    model: ChatClient,
    judge_client: ChatClient | None,
    bench_dir: str | Path,
    max_tokens: int = 128,
) -> list[EvalRecord]:
    """Query and score every promoted item under both views.

    The prompt, decode parameters, and scorer configuration are shared
    between the two views; only the image differs. A transport failure
    marks that (item, view) record failed instead of aborting the run.
    """
    bench_dir = Path(bench_dir)
    promoted = sorted((i for i in items if i.status == "promoted"), key=lambda i: i.item_id)
    if not promoted:
        raise StageError("no promoted items to evaluate; run the review workflow first")

    decode = DecodeParams(temperature=0.0, max_tokens=max_tokens)
    records: list[EvalRecord] = []
    for item in promoted:
        prompt = eval_prompt(item)
        for view, rel in ((VIEW_GLOBAL, item.full_image), (VIEW_REGIONAL, item.crop_image)):
            image_bytes = (bench_dir / rel).read_bytes()
            try:
                response = chat_with_image(model, image_bytes, prompt, decode)
                result = scorer.score(
                    item.question, item.gold(), response, fmt=item.fmt, judge_client=judge_client
                )
                records.append(
                    EvalRecord(
                        item_id=item.item_id,
                        view=view,
                        model_id=model.endpoint.model,
                        response=response,
                        extracted=result.extracted,
                        score=result.score,
                        tier=result.tier,
                    )
                )
            except TransportError as exc:
                log.warning("eval failed for %s/%s: %s", item.item_id, view, exc)
                records.append(
                    EvalRecord(
                        item_id=item.item_id,
                        view=view,
                        model_id=model.endpoint.model,
                        response="",
                        extracted="",
                        score=None,
                        tier=None,
                        failed=True,
                    )
                )
    return records


def gap_value(global_acc: float, regional_acc: float) -> float:
    """The zoom gap: regional accuracy minus global accuracy."""
    return regional_acc - global_acc


@dataclass
class GapRow:
    dimension: str
    n_global: int
    n_regional: int
    global_acc: float | None
    regional_acc: float | None

    @property
    def gap(self) -> float | None:
        if self.global_acc is None or self.regional_acc is None:
            return None
        return gap_value(self.global_acc, self.regional_acc)

    def to_dict(self) -> dict[str, Any]:
        return {
            "dimension": self.dimension,
            "n_global": self.n_global,
            "n_regional": self.n_regional,
            "global_acc": self.global_acc,
            "regional_acc": self.regional_acc,
            "gap": self.gap,
        }


@dataclass
class GapReport:
    model_id: str
    rows: list[GapRow] = field(default_factory=list)
    overall_global: float | None = None
    overall_regional: float | None = None
    n_global: int = 0
    n_regional: int = 0
    failures: int = 0

    @property
    def overall_gap(self) -> float | None:
        if self.overall_global is None or self.overall_regional is None:
            return None
        return gap_value(self.overall_global, self.overall_regional)

    def to_dict(self) -> dict[str, Any]:
        return {
            "model_id": self.model_id,
            "rows": [r.to_dict() for r in self.rows],
            "overall_global": self.overall_global,
            "overall_regional": self.overall_regional,
            "overall_gap": self.overall_gap,
            "n_global": self.n_global,
            "n_regional": self.n_regional,
            "failures": self.failures,
        }


def _accuracy(scores: list[int]) -> float | None:
    if not scores:
        return None
    return 100.0 * sum(scores) / len(scores)


def compute_gap(records: Sequence[EvalRecord], items: Sequence[BenchItem]) -> list[GapReport]:
    """Aggregate eval records into per-model gap reports.

    Per-dimension accuracies average item scores inside that dimension;
    the overall row is the sample-count-weighted mean of the dimension
    rows, which equals the flat mean over all scored records. Failed
    records stay out of every denominator and are tallied separately.
    """
    dim_of = {item.item_id: item.dimension for item in items}
    by_model: dict[str, list[EvalRecord]] = {}
    for record in records:
        by_model.setdefault(record.model_id, []).append(record)

    reports: list[GapReport] = []
    for model_id in sorted(by_model):
        model_records = by_model[model_id]
        failures = sum(1 for r in model_records if r.failed)
        scores: dict[str, dict[str, list[int]]] = {}
        for record in model_records:
            if record.failed or record.score is None:
                continue
            dimension = dim_of.get(record.item_id, "unknown")
            scores.setdefault(dimension, {}).setdefault(record.view, []).append(record.score)

        ordered_dims = [d for d in DIMENSIONS if d in scores]
        ordered_dims += sorted(d for d in scores if d not in DIMENSIONS)
        rows = []
        for dimension in ordered_dims:
            g = scores[dimension].get(VIEW_GLOBAL, [])
            r = scores[dimension].get(VIEW_REGIONAL, [])
            rows.append(
                GapRow(
                    dimension=dimension,
                    n_global=len(g),
                    n_regional=len(r),
                    global_acc=_accuracy(g),
                    regional_acc=_accuracy(r),
                )
            )

        # Overall accuracy is the weighted mean of the per-dimension rows.
        n_global = sum(row.n_global for row in rows)
        n_regional = sum(row.n_regional for row in rows)
        overall_global = (
            sum(row.global_acc * row.n_global for row in rows if row.global_acc is not None) / n_global
            if n_global
            else None
        )
        overall_regional = (
            sum(row.regional_acc * row.n_regional for row in rows if row.regional_acc is not None)
            / n_regional
            if n_regional
            else None
        )
        reports.append(
            GapReport(
                model_id=model_id,
                rows=rows,
                overall_global=overall_global,
                overall_regional=overall_regional,
                n_global=n_global,
                n_regional=n_regional,
                failures=failures,
            )
        )
    return reports


def _fmt(value: float | None) -> str:
    return f"{value:.2f}" if value is not None else "-"


def format_gap_table(reports: Sequence[GapReport]) -> str:
    """Aligned text table: per model, three rows (Global / Regional / Gap)
    across the dimension columns plus a weighted Avg column."""
    dims = [d for d in DIMENSIONS if any(r.dimension == d for rep in reports for r in rep.rows)]
    extras = sorted(
        {r.dimension for rep in reports for r in rep.rows} - set(dims)
    )
    dims += extras
    headers = [d.capitalize() for d in dims] + ["Avg"]
    name_width = max([len("Model")] + [len(rep.model_id) for rep in reports]) + 2
    col_widths = [max(len(h), 8) for h in headers]

    lines = ["Model".ljust(name_width) + "  ".join(h.rjust(w) for h, w in zip(headers, col_widths))]
    for report in reports:
        row_map = {row.dimension: row for row in report.rows}
        lines.append(report.model_id.ljust(name_width).rstrip())
        for label, pick in (
            ("Global", lambda row: row.global_acc),
            ("Regional", lambda row: row.regional_acc),
            ("Gap", lambda row: row.gap),
        ):
            overall = {
                "Global": report.overall_global,
                "Regional": report.overall_regional,
                "Gap": report.overall_gap,
            }[label]
            cells = [
                _fmt(pick(row_map[d]) if d in row_map else None) for d in dims
            ] + [_fmt(overall)]
            lines.append(
                ("  " + label).ljust(name_width) + "  ".join(c.rjust(w) for c, w in zip(cells, col_widths))
            )
    omitted = sorted(set(DIMENSIONS) - set(dims))
    if omitted:
        lines.append(f"(no items in: {', '.join(omitted)})")
    return "\n".join(lines) + "\n"


def save_eval_records(path: str | Path, records: Sequence[EvalRecord]) -> None:
    """Merge records into the eval file, replacing rows for the same model."""
    path = Path(path)
    models = {r.model_id for r in records}
    existing = [EvalRecord.from_dict(r) for r in jsonl.read_records(path)]
    merged = [r for r in existing if r.model_id not in models] + list(records)
    merged.sort(key=lambda r: (r.model_id, r.item_id, r.view))
    jsonl.write_records_atomic(path, (r.to_dict() for r in merged))


def load_eval_records(path: str | Path) -> list[EvalRecord]:
    return [EvalRecord.from_dict(r) for r in jsonl.read_records(Path(path))]
