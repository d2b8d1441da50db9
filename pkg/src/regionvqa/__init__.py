"""Region-grounded VQA data synthesis, benchmarking, and evaluation."""

__version__ = "0.1.0"

from .config import PipelineConfig, default_config, load_config  # noqa: F401
from .errors import (  # noqa: F401
    BundleError,
    JudgeOutputError,
    NonRetryableError,
    RegionVqaError,
    StageError,
    TransportError,
    UsageError,
    VerdictConflictError,
)
