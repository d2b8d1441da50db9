"""Exception types shared across the toolkit.

Exit-code mapping for the CLI lives on the classes so subcommands do not
need their own tables: 1 usage, 2 stage-fatal, 3 transport exhausted.
"""

from __future__ import annotations


class RegionVqaError(Exception):
    exit_code = 2


class UsageError(RegionVqaError):
    """Bad invocation or config: unknown field, missing path, out-of-range value."""

    exit_code = 1


class StageError(RegionVqaError):
    """A pipeline stage cannot produce its contract output."""

    exit_code = 2


class TransportError(RegionVqaError):
    """Remote call failed after the retry budget was exhausted."""

    exit_code = 3


class NonRetryableError(TransportError):
    """Remote endpoint rejected the request outright (HTTP 4xx)."""


class JudgeOutputError(RegionVqaError):
    """Judge response had no parseable verdict even after one retry."""


class BundleError(RegionVqaError):
    """Attention bundle failed validation; message names tensor and index."""


class VerdictConflictError(RegionVqaError):
    """Review verdict submitted against an item that already left pending."""
