"""Error taxonomy.

JobError covers everything wrong with the job file or the request itself
(CLI exit 1); ExtractorError covers failures while running the extraction
(CLI exit 2). UnsupportedModelError is the explicit signal for model
architectures whose attention we cannot read.
"""

from __future__ import annotations


class ExtractorError(Exception):
    exit_code = 2


class JobError(ExtractorError):
    exit_code = 1


class UnsupportedModelError(ExtractorError):
    exit_code = 2
