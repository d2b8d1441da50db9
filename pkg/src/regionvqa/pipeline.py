"""Stage-oriented pipeline with durable outputs and resume.

Every stage writes a keyed JSONL file under the work directory and is
marked complete in state.json. Re-running skips completed stages; with
resume enabled, a partially written stage continues from the records
already on disk (appends happen in sorted key order, so an interrupted and
resumed run produces byte-identical output to an uninterrupted one and
never re-issues a model request for finished work).

The training chain is ingest -> propose -> filter -> crop -> questions ->
answers -> consensus -> ground -> difficulty -> emit. The bench chain
shares the front half on the bench partition, then assembles dual-view
review items instead of grounded training samples.
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Iterable

from PIL import Image

from . import attention, jsonl
from .bench.evaluate import (
    compute_gap,
    format_gap_table,
    load_eval_records,
    run_dual_view,
    save_eval_records,
)
from .bench.items import (
    BenchItem,
    FormatPolicy,
    build_bench_item,
    classify_dimension,
    load_items,
    make_mcq,
    save_items,
)
from .client import ClientFactory, ResponseCache
from .config import PipelineConfig
from .corpus import (
    Manifest,
    PrecomputedProposer,
    RegionProposal,
    VlmProposer,
    ingest_images,
    propose_regions,
    resolve_image_path,
    sparsity_filter,
    split_partitions,
)
from .distill import AugmentedSample, OverlayStyle, difficulty_filter, emit_dataset, ground_to_full
from .errors import StageError, TransportError, UsageError
from .synthesis import (
    AnswerSample,
    CropSpec,
    SynthesizedQA,
    consensus,
    crop_region,
    generate_questions,
    load_prompt,
    question_gen_prompt,
    sample_answers,
)

log = logging.getLogger(__name__)

TRAIN_STAGES = (
    "ingest",
    "propose",
    "filter",
    "crop",
    "questions",
    "answers",
    "consensus",
    "ground",
    "difficulty",
    "emit",
)

BENCH_STAGES = (
    "ingest",
    "bench-propose",
    "bench-filter",
    "bench-crop",
    "bench-questions",
    "bench-answers",
    "bench-consensus",
    "bench-items",
)

ALL_STAGES = TRAIN_STAGES + BENCH_STAGES[1:]


class Pipeline:
    def __init__(
        self,
        config: PipelineConfig,
        work_dir: str | Path,
        dataset_dir: str | Path | None = None,
        bench_dir: str | Path | None = None,
        corpus_roots: list[str] | None = None,
        mock: bool = False,
        seed: int | None = None,
        resume: bool = False,
        factory: ClientFactory | None = None,
    ):
        self.config = config
        self.work = Path(work_dir)
        self.work.mkdir(parents=True, exist_ok=True)
        self.dataset_dir = Path(dataset_dir) if dataset_dir else self.work / "dataset"
        self.bench_dir = Path(bench_dir) if bench_dir else self.work / "bench_out"
        self.roots = [Path(r) for r in (corpus_roots or config.corpus.roots)]
        self.mock = mock
        self.seed = seed if seed is not None else config.runtime.master_seed
        self.resume = resume
        cache = (
            ResponseCache(self.work / "cache") if config.runtime.cache_enabled else None
        )
        self.factory = factory or ClientFactory(config, mock=mock, seed=self.seed, cache=cache)
        self.state_path = self.work / "state.json"
        self._manifest_cache: Manifest | None = None

    # ------------------------------------------------------------------
    # state handling

    def _state(self) -> dict[str, Any]:
        if self.state_path.exists():
            return json.loads(self.state_path.read_text(encoding="utf-8"))
        return {"completed": [], "config_sha256": self.config.config_sha256, "seed": self.seed}

    def _check_state(self) -> None:
        state = self._state()
        if state.get("completed"):
            if state.get("config_sha256") != self.config.config_sha256 or state.get("seed") != self.seed:
                raise UsageError(
                    "work dir state was produced with a different config or seed; "
                    "byte-stable resume is impossible (clean the work dir to start over)"
                )

    def _is_completed(self, stage: str) -> bool:
        return stage in self._state()["completed"]

    def _mark_completed(self, stage: str) -> None:
        state = self._state()
        if stage not in state["completed"]:
            state["completed"].append(stage)
        state["config_sha256"] = self.config.config_sha256
        state["seed"] = self.seed
        tmp = self.state_path.with_suffix(".tmp")
        tmp.write_text(json.dumps(state, indent=2) + "\n", encoding="utf-8")
        os.replace(tmp, self.state_path)

    # ------------------------------------------------------------------
    # shared plumbing

    def _subdir(self, prefix: str) -> Path:
        path = self.work / prefix
        path.mkdir(parents=True, exist_ok=True)
        return path

    def manifest(self) -> Manifest:
        if self._manifest_cache is None:
            path = self.work / "manifest.jsonl"
            if not path.exists():
                raise StageError("no manifest; run the ingest stage first")
            self._manifest_cache = Manifest.load(path)
        return self._manifest_cache

    def _source_path(self, image_id: str) -> Path:
        record = self.manifest().by_id()[image_id]
        return resolve_image_path(record, self.roots)

    def _run_keyed_stage(
        self,
        stage: str,
        out_path: Path,
        key_field: str,
        work_items: list[tuple[str, Callable[[], dict[str, Any]]]],
        parallel: bool = True,
    ) -> None:
        """Compute and append rows for keys not already on disk.

        work_items must be sorted by key and each fn must be independent of
        execution order. Appends preserve sorted order so interrupted and
        clean runs serialize identically.
        """
        done = jsonl.done_keys(out_path, key_field) if out_path.exists() else set()
        if done and not self.resume:
            raise UsageError(
                f"stage '{stage}' has partial output at {out_path}; "
                "pass --resume to continue or remove the work directory"
            )
        missing = [(key, fn) for key, fn in work_items if key not in done]
        results: dict[str, dict[str, Any]] = {}
        workers = self.config.runtime.workers
        if parallel and workers > 1 and len(missing) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                futures = [(key, pool.submit(fn)) for key, fn in missing]
                for key, future in futures:
                    results[key] = future.result()
        else:
            for key, fn in missing:
                results[key] = fn()
        if results:
            with jsonl.JsonlWriter(out_path) as writer:
                for key, _fn in work_items:
                    if key in results:
                        writer.append(results[key])

    def _stage(self, name: str, runner: Callable[[], None]) -> None:
        if self._is_completed(name):
            log.info("stage %-16s already complete, skipping", name)
            return
        log.info("stage %-16s running", name)
        runner()
        self._mark_completed(name)

    # ------------------------------------------------------------------
    # ingest (shared by both chains)

    def stage_ingest(self) -> None:
        if not self.roots:
            raise UsageError("no corpus roots configured (set corpus.roots or pass --corpus)")
        result = ingest_images(self.roots, self.config.corpus.min_dim, self.config.runtime.workers)
        manifest = split_partitions(result.manifest, self.config.corpus.bench_fraction, self.seed)
        manifest.assert_no_leakage()
        manifest.save(self.work / "manifest.jsonl")
        jsonl.write_records_atomic(
            self.work / "ingest_warnings.jsonl", (w.to_dict() for w in result.warnings)
        )
        self._manifest_cache = manifest
        log.info(
            "ingested %d images (%d unreadable, %d below min_dim, %d duplicates)",
            len(manifest.records),
            len(result.warnings),
            result.excluded_small,
            result.duplicates,
        )

    # ------------------------------------------------------------------
    # synthesis chain, shared by train and bench partitions

    def _proposer(self) -> Any:
        if self.config.corpus.proposer == "precomputed":
            return PrecomputedProposer(self.config.corpus.annotations_path)
        return VlmProposer(
            self.factory.chat("inventory"),
            self.factory.segmenter(),
            load_prompt("inventory_prompt.txt"),
        )

    def stage_propose(self, prefix: str, partition: str) -> None:
        base = self._subdir(prefix)
        out = base / "proposals.jsonl"
        audit_path = base / "proposer_raw.jsonl"
        records = sorted(self.manifest().partition_records(partition), key=lambda r: r.image_id)
        if not records:
            raise StageError(f"no images in partition '{partition}'")
        direct = self.config.runtime.direct_synthesis
        proposer = None if direct else self._proposer()
        audit_done = jsonl.done_keys(audit_path, "image_id") if audit_path.exists() else set()

        def make_fn(record: Any) -> Callable[[], dict[str, Any]]:
            def fn() -> dict[str, Any]:
                if direct:
                    proposal = RegionProposal(
                        box_id=f"{record.image_id}.b00",
                        image_id=record.image_id,
                        bbox=[0, 0, record.width, record.height],
                        label="full frame",
                        area_ratio=1.0,
                    )
                    return {"image_id": record.image_id, "proposals": [proposal.to_dict()], "audit": None}
                image_bytes = resolve_image_path(record, self.roots).read_bytes()
                proposals, raw = propose_regions(
                    record,
                    image_bytes,
                    proposer,
                    self.config.corpus.max_proposals_per_image,
                    self.config.corpus.min_box_px,
                )
                return {
                    "image_id": record.image_id,
                    "proposals": [p.to_dict() for p in proposals],
                    "audit": raw,
                }

            return fn

        done = jsonl.done_keys(out, "image_id") if out.exists() else set()
        if done and not self.resume:
            raise UsageError(
                f"stage '{prefix}-propose' has partial output; pass --resume or clean the work dir"
            )
        missing = [r for r in records if r.image_id not in done]
        results: dict[str, dict[str, Any]] = {}
        workers = self.config.runtime.workers
        if workers > 1 and len(missing) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                futures = [(r.image_id, pool.submit(make_fn(r))) for r in missing]
                for image_id, future in futures:
                    results[image_id] = future.result()
        else:
            for record in missing:
                results[record.image_id] = make_fn(record)()
        if results:
            with jsonl.JsonlWriter(out) as writer, jsonl.JsonlWriter(audit_path) as audit:
                for record in records:
                    row = results.get(record.image_id)
                    if row is None:
                        continue
                    raw = row.pop("audit")
                    writer.append(row)
                    if record.image_id not in audit_done:
                        audit.append({"image_id": record.image_id, "raw": raw})

    def stage_filter(self, prefix: str) -> None:
        base = self._subdir(prefix)
        rows = jsonl.read_records(base / "proposals.jsonl")
        kept_rows: list[dict[str, Any]] = []
        for row in rows:
            proposals = [RegionProposal.from_dict(p) for p in row["proposals"]]
            if self.config.runtime.direct_synthesis:
                kept = proposals  # full-frame pseudo regions bypass the ratio filter
            else:
                kept = sparsity_filter(proposals, self.config.corpus.tau)
            kept_rows.extend(p.to_dict() for p in kept)
        kept_rows.sort(key=lambda r: r["box_id"])
        jsonl.write_records_atomic(base / "regions.jsonl", kept_rows)
        log.info("%s: kept %d regions (tau=%s)", prefix, len(kept_rows), self.config.corpus.tau)

    def stage_crop(self, prefix: str) -> None:
        base = self._subdir(prefix)
        regions = [RegionProposal.from_dict(r) for r in jsonl.read_records(base / "regions.jsonl")]
        crops_dir = base / "crops"
        scale = 1.0 if self.config.runtime.direct_synthesis else self.config.synthesis.scale_factor

        def make_fn(region: RegionProposal) -> Callable[[], dict[str, Any]]:
            def fn() -> dict[str, Any]:
                spec = crop_region(
                    self._source_path(region.image_id), region.bbox, scale, region.box_id, crops_dir
                )
                spec.crop_path = Path(spec.crop_path).relative_to(self.work).as_posix()
                return spec.to_dict()

            return fn

        self._run_keyed_stage(
            f"{prefix}-crop",
            base / "crops.jsonl",
            "box_id",
            [(r.box_id, make_fn(r)) for r in sorted(regions, key=lambda r: r.box_id)],
        )

    def stage_questions(self, prefix: str) -> None:
        base = self._subdir(prefix)
        crops = [CropSpec.from_dict(r) for r in jsonl.read_records(base / "crops.jsonl")]
        generator = self.factory.chat("question_generator")
        k = self.config.synthesis.questions_per_crop
        exemplars_path = self.config.synthesis.exemplars_path
        exemplars = Path(exemplars_path).read_text(encoding="utf-8").strip() if exemplars_path else None
        prompt = question_gen_prompt(exemplars)

        def make_fn(spec: CropSpec) -> Callable[[], dict[str, Any]]:
            def fn() -> dict[str, Any]:
                crop_bytes = (self.work / spec.crop_path).read_bytes()
                questions = generate_questions(crop_bytes, generator, k, prompt)
                if questions is None:
                    return {"box_id": spec.box_id, "questions": None, "failed": True}
                return {"box_id": spec.box_id, "questions": questions, "failed": False}

            return fn

        self._run_keyed_stage(
            f"{prefix}-questions",
            base / "questions.jsonl",
            "box_id",
            [(s.box_id, make_fn(s)) for s in sorted(crops, key=lambda s: s.box_id)],
        )

    def stage_answers(self, prefix: str) -> None:
        base = self._subdir(prefix)
        crop_paths = {r["box_id"]: r["crop_path"] for r in jsonl.read_records(base / "crops.jsonl")}
        teachers = self.factory.teachers()
        cfg = self.config.synthesis
        work_items: list[tuple[str, Callable[[], dict[str, Any]]]] = []
        for row in jsonl.read_records(base / "questions.jsonl"):
            if row.get("failed") or not row["questions"]:
                continue
            for index, question in enumerate(row["questions"]):
                qa_id = f"{row['box_id']}.q{index}"

                def make_fn(qa_id: str, box_id: str, question: str) -> Callable[[], dict[str, Any]]:
                    def fn() -> dict[str, Any]:
                        crop_bytes = (self.work / crop_paths[box_id]).read_bytes()
                        try:
                            samples = sample_answers(
                                crop_bytes,
                                question,
                                teachers,
                                cfg.samples_per_teacher,
                                cfg.teacher_temperature,
                                cfg.max_answer_tokens,
                            )
                        except TransportError as exc:
                            log.warning("discarding %s: %s", qa_id, exc)
                            return {
                                "qa_id": qa_id,
                                "box_id": box_id,
                                "question": question,
                                "samples": None,
                                "discarded": True,
                            }
                        return {
                            "qa_id": qa_id,
                            "box_id": box_id,
                            "question": question,
                            "samples": [s.to_dict() for s in samples],
                            "discarded": False,
                        }

                    return fn

                work_items.append((qa_id, make_fn(qa_id, row["box_id"], question)))
        work_items.sort(key=lambda pair: pair[0])
        self._run_keyed_stage(f"{prefix}-answers", base / "answers.jsonl", "qa_id", work_items)

    def stage_consensus(self, prefix: str) -> None:
        base = self._subdir(prefix)
        image_of_box = {
            r["box_id"]: r["image_id"] for r in jsonl.read_records(base / "regions.jsonl")
        }
        threshold = self.config.synthesis.consensus_threshold
        rows: list[dict[str, Any]] = []
        for row in jsonl.read_records(base / "answers.jsonl"):
            if row.get("discarded"):
                continue
            samples = [AnswerSample(**s) for s in row["samples"]]
            verdict = consensus(samples, threshold)
            qa = SynthesizedQA(
                qa_id=row["qa_id"],
                box_id=row["box_id"],
                image_id=image_of_box[row["box_id"]],
                question=row["question"],
                answer=verdict.label,
                accepted=verdict.accepted,
                majority_count=verdict.majority_count,
                total_samples=verdict.total,
                samples=samples,
            )
            rows.append(qa.to_dict())
        rows.sort(key=lambda r: r["qa_id"])
        jsonl.write_records_atomic(base / "qa.jsonl", rows)
        accepted = sum(1 for r in rows if r["accepted"])
        log.info("%s: consensus accepted %d of %d QA pairs", prefix, accepted, len(rows))

    # ------------------------------------------------------------------
    # train-only stages

    def stage_ground(self) -> None:
        base = self._subdir("synth")
        bbox_of_box = {r["box_id"]: r["bbox"] for r in jsonl.read_records(base / "regions.jsonl")}
        out_dir = base / "grounded"
        cfg = self.config.distill
        style = OverlayStyle(
            color=tuple(cfg.overlay_color),
            rel_width=cfg.overlay_rel_width,
            min_width=cfg.overlay_min_width,
        )
        variant = "no_bbox" if self.config.runtime.direct_synthesis else cfg.variant
        accepted = [
            SynthesizedQA.from_dict(r)
            for r in jsonl.read_records(base / "qa.jsonl")
            if r["accepted"]
        ]

        def make_fn(qa: SynthesizedQA) -> Callable[[], dict[str, Any]]:
            def fn() -> dict[str, Any]:
                sample = ground_to_full(
                    self._source_path(qa.image_id),
                    bbox_of_box[qa.box_id],
                    qa.question,
                    qa.answer or "",
                    variant,
                    sample_id=qa.qa_id,
                    image_id=qa.image_id,
                    qa_id=qa.qa_id,
                    box_id=qa.box_id,
                    out_dir=out_dir,
                    style=style,
                    overlay_suffix=cfg.overlay_suffix,
                    coord_suffix=cfg.coord_suffix,
                )
                sample.image_path = Path(sample.image_path).relative_to(self.work).as_posix()
                return sample.to_dict()

            return fn

        self._run_keyed_stage(
            "ground",
            base / "grounded.jsonl",
            "sample_id",
            [(qa.qa_id, make_fn(qa)) for qa in sorted(accepted, key=lambda q: q.qa_id)],
        )

    def stage_difficulty(self) -> None:
        base = self._subdir("synth")
        student = self.factory.chat("student")
        judge_client = self.factory.chat("judge")
        cfg = self.config.distill
        samples = [
            AugmentedSample.from_dict(r) for r in jsonl.read_records(base / "grounded.jsonl")
        ]

        def make_fn(sample: AugmentedSample) -> Callable[[], dict[str, Any]]:
            def fn() -> dict[str, Any]:
                image_bytes = (self.work / sample.image_path).read_bytes()
                try:
                    verdict = difficulty_filter(
                        sample,
                        image_bytes,
                        student,
                        judge_client,
                        cfg.trials,
                        cfg.max_correct,
                        cfg.student_temperature,
                    )
                except TransportError as exc:
                    log.warning("parking %s: student/judge unavailable (%s)", sample.sample_id, exc)
                    return {"sample_id": sample.sample_id, "parked": True, "error": str(exc)}
                return verdict.to_dict()

            return fn

        self._run_keyed_stage(
            "difficulty",
            base / "verdicts.jsonl",
            "sample_id",
            [(s.sample_id, make_fn(s)) for s in sorted(samples, key=lambda s: s.sample_id)],
        )

    def stage_emit(self) -> None:
        base = self._subdir("synth")
        samples = {
            r["sample_id"]: AugmentedSample.from_dict(r)
            for r in jsonl.read_records(base / "grounded.jsonl")
        }
        kept: list[AugmentedSample] = []
        dropped = parked = 0
        for row in jsonl.read_records(base / "verdicts.jsonl"):
            if row.get("parked"):
                parked += 1
                continue
            sample = samples[row["sample_id"]]
            if row["kept"]:
                sample.image_path = str(self.work / sample.image_path)
                kept.append(sample)
            else:
                dropped += 1
        manifest = emit_dataset(
            kept,
            self.dataset_dir,
            config_sha256=self.config.config_sha256,
            seed=self.seed,
            parked=parked,
            dropped=dropped,
        )
        self._write_run_report(manifest)
        log.info(
            "emitted %d samples to %s (%d dropped as easy, %d parked)",
            manifest["samples"],
            self.dataset_dir,
            dropped,
            parked,
        )

    def _write_run_report(self, dataset_manifest: dict[str, Any]) -> None:
        base = self.work / "synth"
        counts = {
            "images": len(self.manifest().records),
            "train_images": len(self.manifest().partition_records("train")),
            "bench_images": len(self.manifest().partition_records("bench")),
            "proposals": sum(
                len(r["proposals"]) for r in jsonl.read_records(base / "proposals.jsonl")
            ),
            "regions_kept": len(jsonl.read_records(base / "regions.jsonl")),
            "questions": sum(
                len(r["questions"] or []) for r in jsonl.read_records(base / "questions.jsonl")
            ),
            "qa_accepted": sum(1 for r in jsonl.read_records(base / "qa.jsonl") if r["accepted"]),
            "qa_total": len(jsonl.read_records(base / "qa.jsonl")),
        }
        report = {
            "counts": counts,
            "dataset": dataset_manifest,
            "config_sha256": self.config.config_sha256,
            "seed": self.seed,
        }
        (self.work / "run_report.json").write_text(
            json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )

    # ------------------------------------------------------------------
    # bench-only stage

    def stage_bench_items(self) -> None:
        base = self._subdir("bench")
        rows_path = base / "item_rows.jsonl"
        crop_paths = {r["box_id"]: r["crop_path"] for r in jsonl.read_records(base / "crops.jsonl")}
        bbox_of_box = {r["box_id"]: r["bbox"] for r in jsonl.read_records(base / "regions.jsonl")}
        accepted = [
            SynthesizedQA.from_dict(r)
            for r in jsonl.read_records(base / "qa.jsonl")
            if r["accepted"]
        ]
        if not accepted:
            raise StageError("no accepted bench QA pairs; nothing to review")
        policy = FormatPolicy(
            mcq_fraction=self.config.bench.mcq_fraction,
            n_options=self.config.bench.mcq_options,
        )
        distractor_client = self.factory.chat("distractor")
        classifier = self.factory.chat("classifier")
        records_by_id = self.manifest().by_id()
        scale = self.config.synthesis.scale_factor

        def make_fn(qa: SynthesizedQA) -> Callable[[], dict[str, Any]]:
            def fn() -> dict[str, Any]:
                crop_bytes = (self.work / crop_paths[qa.box_id]).read_bytes()
                fmt = policy.decide(qa.qa_id)
                options = None
                gold = None
                if fmt == "mcq":
                    mcq = make_mcq(
                        qa.question,
                        qa.answer or "",
                        qa.qa_id,
                        distractor_client,
                        crop_bytes,
                        self.config.bench.mcq_options,
                    )
                    if mcq is None:
                        fmt = "open"
                    else:
                        options, gold = mcq
                dimension = classify_dimension(qa.question, crop_bytes, classifier)
                item = build_bench_item(
                    records_by_id[qa.image_id],
                    self._source_path(qa.image_id),
                    bbox_of_box[qa.box_id],
                    qa.qa_id,
                    qa.question,
                    qa.answer or "",
                    fmt,
                    dimension,
                    self.bench_dir,
                    options=options,
                    gold=gold,
                    scale_factor=scale,
                )
                return item.to_dict()

            return fn

        self._run_keyed_stage(
            "bench-items",
            rows_path,
            "item_id",
            [(qa.qa_id, make_fn(qa)) for qa in sorted(accepted, key=lambda q: q.qa_id)],
        )
        items = [BenchItem.from_dict(r) for r in jsonl.read_records(rows_path)]
        save_items(self.bench_dir / "items.jsonl", items)
        by_fmt: dict[str, int] = {}
        by_dim: dict[str, int] = {}
        for item in items:
            by_fmt[item.fmt] = by_fmt.get(item.fmt, 0) + 1
            by_dim[item.dimension] = by_dim.get(item.dimension, 0) + 1
        bench_manifest = {
            "items": len(items),
            "by_format": dict(sorted(by_fmt.items())),
            "by_dimension": dict(sorted(by_dim.items())),
            "config_sha256": self.config.config_sha256,
            "seed": self.seed,
        }
        (self.bench_dir / "manifest.json").write_text(
            json.dumps(bench_manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        log.info("built %d bench items into %s", len(items), self.bench_dir)

    # ------------------------------------------------------------------
    # runners

    def run(self, stages: Iterable[str]) -> None:
        self._check_state()
        runners: dict[str, Callable[[], None]] = {
            "ingest": self.stage_ingest,
            "propose": lambda: self.stage_propose("synth", "train"),
            "filter": lambda: self.stage_filter("synth"),
            "crop": lambda: self.stage_crop("synth"),
            "questions": lambda: self.stage_questions("synth"),
            "answers": lambda: self.stage_answers("synth"),
            "consensus": lambda: self.stage_consensus("synth"),
            "ground": self.stage_ground,
            "difficulty": self.stage_difficulty,
            "emit": self.stage_emit,
            "bench-propose": lambda: self.stage_propose("bench", "bench"),
            "bench-filter": lambda: self.stage_filter("bench"),
            "bench-crop": lambda: self.stage_crop("bench"),
            "bench-questions": lambda: self.stage_questions("bench"),
            "bench-answers": lambda: self.stage_answers("bench"),
            "bench-consensus": lambda: self.stage_consensus("bench"),
            "bench-items": self.stage_bench_items,
        }
        for stage in stages:
            if stage not in runners:
                raise UsageError(f"unknown stage '{stage}'")
            self._stage(stage, runners[stage])


# ----------------------------------------------------------------------
# post-review entry points


def run_eval(
    config: PipelineConfig,
    bench_dir: str | Path,
    factory: ClientFactory,
    model_role: str = "eval_model",
) -> list[Any]:
    bench_dir = Path(bench_dir)
    items = load_items(bench_dir / "items.jsonl")
    if not items:
        raise StageError(f"no bench items at {bench_dir}")
    model = factory.chat(model_role)
    judge_client = factory.chat("judge")
    records = run_dual_view(items, model, judge_client, bench_dir)
    save_eval_records(bench_dir / "eval.jsonl", records)
    return records


def run_gap_report(bench_dir: str | Path) -> tuple[list[Any], str]:
    bench_dir = Path(bench_dir)
    records = load_eval_records(bench_dir / "eval.jsonl")
    if not records:
        raise StageError(f"no eval records at {bench_dir / 'eval.jsonl'}; run eval first")
    items = load_items(bench_dir / "items.jsonl")
    reports = compute_gap(records, items)
    table = format_gap_table(reports)
    (bench_dir / "gap_report.json").write_text(
        json.dumps({"models": [r.to_dict() for r in reports]}, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    (bench_dir / "gap_report.txt").write_text(table, encoding="utf-8")
    return reports, table


def run_attention_coverage(
    config: PipelineConfig,
    bundles_dir: str | Path,
    bench_dir: str | Path,
    answer_layer: int | None = None,
    connector_layer: int | None = None,
) -> tuple[list[attention.CoverageRecord], str]:
    bundles_dir = Path(bundles_dir)
    bench_dir = Path(bench_dir)
    items = {i.item_id: i for i in load_items(bench_dir / "items.jsonl")}
    layer = answer_layer if answer_layer is not None else config.attention.answer_layer
    connector = (
        connector_layer if connector_layer is not None else config.attention.connector_layer
    )
    records: list[attention.CoverageRecord] = []
    bundle_dirs = sorted(p for p in bundles_dir.iterdir() if (p / "metadata.json").exists())
    if not bundle_dirs:
        raise StageError(f"no attention bundles under {bundles_dir}")
    for bundle_dir in bundle_dirs:
        bundle = attention.load_bundle(bundle_dir)
        item = items.get(bundle.item_id)
        if item is None:
            log.warning("bundle %s references unknown item %s; skipping", bundle_dir.name, bundle.item_id)
            continue
        with Image.open(bench_dir / item.full_image) as img:
            size = img.size
        records.append(
            attention.coverage_for_bundle(
                bundle,
                item.bbox,
                size,
                layer,
                connector,
                config.attention.epsilon,
            )
        )
    if not records:
        raise StageError("no bundles matched bench items; nothing to report")
    table = attention.write_coverage_report(records, bench_dir / "coverage.jsonl")
    (bench_dir / "coverage.txt").write_text(table, encoding="utf-8")
    return records, table
