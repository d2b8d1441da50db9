"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 stage failure, 3 transport failure
after retries. Subcommands run a prefix of the stage graph, so each command
implies the stages it depends on; completed stages are skipped.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .client import ClientFactory, ResponseCache
from .config import PipelineConfig, default_config, load_config
from .errors import RegionVqaError, UsageError
from .pipeline import (
    ALL_STAGES,
    BENCH_STAGES,
    TRAIN_STAGES,
    Pipeline,
    run_attention_coverage,
    run_eval,
    run_gap_report,
)

log = logging.getLogger(__name__)

COMMAND_STAGES = {
    "ingest": TRAIN_STAGES[:1],
    "propose": TRAIN_STAGES[:3],
    "synth": TRAIN_STAGES[:7],
    "distill": TRAIN_STAGES[:9],
    "emit": TRAIN_STAGES,
    "bench-build": BENCH_STAGES,
    "all": ALL_STAGES,
}


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on bad arguments; we reserve 2 for stage
    failures, so parse errors are routed through UsageError instead."""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="pipeline config YAML (defaults apply when omitted)")
    parser.add_argument("--work", default="work", help="work directory for stage outputs")
    parser.add_argument("--mock", action="store_true", help="use deterministic offline model clients")
    parser.add_argument("--resume", action="store_true", help="continue a partially completed stage")
    parser.add_argument("--seed", type=int, default=None, help="override the master seed")
    parser.add_argument("--corpus", action="append", default=None, help="corpus root (repeatable)")
    parser.add_argument("--dataset", default=None, help="output directory for the training dataset")
    parser.add_argument("--bench-dir", default=None, help="output directory for the benchmark")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="regionvqa", description="Region-grounded VQA synthesis and evaluation")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    for name, help_text in (
        ("ingest", "scan corpus roots and write the image manifest"),
        ("propose", "propose regions and apply the area-ratio filter"),
        ("synth", "generate questions and teacher-consensus answers"),
        ("distill", "ground accepted QA to full images and run the difficulty filter"),
        ("emit", "write the final training dataset"),
        ("bench-build", "build pending benchmark items from the held-out partition"),
        ("all", "run the full training and benchmark chains"),
    ):
        p = sub.add_parser(name, help=help_text)
        _common_flags(p)

    p = sub.add_parser("review-serve", help="serve the human review API and UI")
    _common_flags(p)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8321)
    p.add_argument("--ui", default=None, help="directory of static UI files to serve at /")
    p.add_argument(
        "--token",
        action="append",
        default=None,
        metavar="ANNOTATOR=TOKEN",
        help="annotator credential (repeatable; overrides config)",
    )

    p = sub.add_parser("eval", help="run the dual-view evaluation on promoted items")
    _common_flags(p)
    p.add_argument("--model-role", default="eval_model", help="endpoint role to evaluate")

    p = sub.add_parser("report", help="print the per-dimension accuracy gap table")
    _common_flags(p)

    p = sub.add_parser("attn-coverage", help="score attention bundles against item regions")
    _common_flags(p)
    p.add_argument("--bundles", required=True, help="directory of attention bundle subdirectories")
    p.add_argument("--layer", type=int, default=None, help="answer attention layer (1-based)")
    p.add_argument("--connector-layer", type=int, default=None, help="connector layer (1-based)")

    return parser


def _load(args: argparse.Namespace) -> PipelineConfig:
    if args.config:
        return load_config(args.config)
    return default_config()


def _pipeline(args: argparse.Namespace, config: PipelineConfig) -> Pipeline:
    return Pipeline(
        config,
        work_dir=args.work,
        dataset_dir=args.dataset,
        bench_dir=args.bench_dir,
        corpus_roots=args.corpus,
        mock=args.mock,
        seed=args.seed,
        resume=args.resume,
    )


def _factory(args: argparse.Namespace, config: PipelineConfig) -> ClientFactory:
    work = Path(args.work)
    cache = ResponseCache(work / "cache") if config.runtime.cache_enabled else None
    seed = args.seed if args.seed is not None else config.runtime.master_seed
    return ClientFactory(config, mock=args.mock, seed=seed, cache=cache)


def _parse_tokens(pairs: list[str] | None, config: PipelineConfig) -> dict[str, str]:
    if not pairs:
        tokens = dict(config.bench.annotator_tokens or {})
        if not tokens:
            raise UsageError("no annotator tokens: pass --token NAME=SECRET or set bench.annotator_tokens")
        return tokens
    tokens = {}
    for pair in pairs:
        name, sep, secret = pair.partition("=")
        if not sep or not name or not secret:
            raise UsageError(f"bad --token value {pair!r}, expected ANNOTATOR=TOKEN")
        tokens[secret] = name
    return tokens


def _cmd_review_serve(args: argparse.Namespace, config: PipelineConfig) -> int:
    import uvicorn

    from .bench.api import create_app
    from .bench.review import ReviewStore

    bench_dir = Path(args.bench_dir or Path(args.work) / "bench_out")
    items_path = bench_dir / "items.jsonl"
    if not items_path.exists():
        raise UsageError(f"no items file at {items_path}; run bench-build first")
    store = ReviewStore(items_path, quorum=config.bench.review_quorum)
    tokens = _parse_tokens(args.token, config)
    app = create_app(
        store,
        tokens,
        bench_dir,
        page_size=config.bench.page_size,
        ui_dir=args.ui,
    )
    print(f"review API on http://{args.host}:{args.port} ({len(store.all_items())} items)")
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(
            level=logging.DEBUG if args.verbose else logging.INFO,
            format="%(levelname)s %(name)s: %(message)s",
        )
        config = _load(args)
        if args.command in COMMAND_STAGES:
            pipeline = _pipeline(args, config)
            pipeline.run(COMMAND_STAGES[args.command])
            return 0
        bench_dir = Path(args.bench_dir or Path(args.work) / "bench_out")
        if args.command == "review-serve":
            return _cmd_review_serve(args, config)
        if args.command == "eval":
            factory = _factory(args, config)
            records = run_eval(config, bench_dir, factory, args.model_role)
            failures = sum(1 for r in records if r.failed)
            print(f"scored {len(records)} view records ({failures} transport failures)")
            _reports, table = run_gap_report(bench_dir)
            print(table)
            return 0
        if args.command == "report":
            _reports, table = run_gap_report(bench_dir)
            print(table)
            return 0
        if args.command == "attn-coverage":
            _records, table = run_attention_coverage(
                config, args.bundles, bench_dir, args.layer, args.connector_layer
            )
            print(table)
            return 0
        raise UsageError(f"unknown command {args.command!r}")
    except RegionVqaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 130


if __name__ == "__main__":
    sys.exit(main())
