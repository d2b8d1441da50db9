"""Command line entry point.

Exit codes: 0 success, 1 job/usage errors, 2 extraction failures.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from . import __version__
from .errors import ExtractorError, JobError
from .extract import extract
from .job import load_job


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise JobError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="attn-extract",
        description="Extract answer-token attention bundles for a job file",
    )
    parser.add_argument("job", help="extraction job JSON file")
    parser.add_argument("--out", help="override the job's output directory")
    parser.add_argument("--version", action="version", version=f"attn-extract {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(
            level=logging.DEBUG if args.verbose else logging.INFO,
            format="%(levelname)s %(name)s: %(message)s",
        )
        job = load_job(args.job)
        if args.out:
            job = dataclasses.replace(job, output_dir=Path(args.out))
        bundles = extract(job)
    except JobError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ExtractorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {len(bundles)} bundles to {job.output_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
