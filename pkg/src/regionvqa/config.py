"""Pipeline configuration.

One YAML file drives every stage. Unknown fields are rejected rather than
ignored so a typo in a tuning knob fails loudly instead of silently running
with a default. The loaded config carries the sha256 of the file bytes;
emitters stamp it into output manifests so a dataset can always be traced
back to the exact settings that produced it.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from .errors import UsageError

GROUNDING_VARIANTS = ("bbox_in_image", "bbox_in_question", "no_bbox")
DIMENSIONS = ("counting", "ocr", "color", "structure", "material", "identification")

# Appended to the question when the region is marked with a drawn box.
DEFAULT_OVERLAY_SUFFIX = "Answer based on the region inside the red bounding box."
# Appended when the region is given as pixel coordinates; {box} becomes
# "[x1, y1, x2, y2]" with integer coordinates.
DEFAULT_COORD_SUFFIX = "Answer based on the region inside the bounding box {box}."


def _build(cls: type, data: dict[str, Any], section: str) -> Any:
    allowed = {f.name for f in fields(cls)}
    unknown = set(data) - allowed
    if unknown:
        raise UsageError(f"config section '{section}' has unknown fields: {sorted(unknown)}")
    return cls(**data)


@dataclass
class EndpointConfig:
    """One remote model endpoint. auth_env names an environment variable
    holding the bearer token; the token itself never appears in config."""

    endpoint_id: str
    model: str = "stub"
    base_url: str = ""
    auth_env: str | None = None
    requests_per_minute: int = 600
    max_concurrency: int = 4
    max_retries: int = 5
    timeout: float = 120.0


@dataclass
class CorpusConfig:
    roots: list[str] = field(default_factory=list)
    min_dim: int = 800
    bench_fraction: float = 0.0
    tau: float = 0.1
    max_proposals_per_image: int = 8
    min_box_px: int = 16
    proposer: str = "vlm"  # "vlm" chains inventory + segmenter; "precomputed" loads a file
    annotations_path: str | None = None

    def validate(self) -> None:
        if not 0.0 < self.tau <= 1.0:
            raise UsageError(f"corpus.tau must be in (0, 1], got {self.tau}")
        if not 0.0 <= self.bench_fraction <= 1.0:
            raise UsageError(f"corpus.bench_fraction must be in [0, 1], got {self.bench_fraction}")
        if self.min_dim < 1:
            raise UsageError("corpus.min_dim must be positive")
        if self.proposer not in ("vlm", "precomputed"):
            raise UsageError(f"corpus.proposer must be 'vlm' or 'precomputed', got {self.proposer!r}")
        if self.proposer == "precomputed" and not self.annotations_path:
            raise UsageError("corpus.annotations_path is required for the precomputed proposer")


@dataclass
class SynthesisConfig:
    scale_factor: float = 2.0
    questions_per_crop: int = 3
    samples_per_teacher: int = 4
    consensus_threshold: int = 6  # accept only when majority count exceeds this
    teacher_temperature: float = 1.0
    max_answer_tokens: int = 64
    exemplars_path: str | None = None

    def validate(self, n_teachers: int) -> None:
        if self.scale_factor < 1.0:
            raise UsageError("synthesis.scale_factor must be >= 1")
        if self.questions_per_crop < 1:
            raise UsageError("synthesis.questions_per_crop must be >= 1")
        total = n_teachers * self.samples_per_teacher
        if not 0 < self.consensus_threshold < total:
            raise UsageError(
                f"synthesis.consensus_threshold ({self.consensus_threshold}) must be "
                f"between 1 and total samples - 1 ({total - 1})"
            )


@dataclass
class DistillConfig:
    variant: str = "bbox_in_image"
    overlay_color: list[int] = field(default_factory=lambda: [255, 0, 0])
    overlay_rel_width: float = 0.004
    overlay_min_width: int = 3
    overlay_suffix: str = DEFAULT_OVERLAY_SUFFIX
    coord_suffix: str = DEFAULT_COORD_SUFFIX
    trials: int = 4
    max_correct: int = 2
    student_temperature: float = 1.0

    def validate(self) -> None:
        if self.variant not in GROUNDING_VARIANTS:
            raise UsageError(f"distill.variant must be one of {GROUNDING_VARIANTS}, got {self.variant!r}")
        if self.trials < 1:
            raise UsageError("distill.trials must be >= 1")
        if not 0 <= self.max_correct <= self.trials:
            raise UsageError("distill.max_correct must be in [0, trials]")
        if len(self.overlay_color) != 3:
            raise UsageError("distill.overlay_color must be an [r, g, b] triple")


@dataclass
class BenchConfig:
    mcq_fraction: float = 0.735
    mcq_options: int = 4
    review_quorum: int = 3
    page_size: int = 20
    # token -> annotator_id; static bearer tokens for the review API
    annotator_tokens: dict[str, str] = field(default_factory=dict)

    def validate(self) -> None:
        if not 0.0 <= self.mcq_fraction <= 1.0:
            raise UsageError("bench.mcq_fraction must be in [0, 1]")
        if self.mcq_options < 2:
            raise UsageError("bench.mcq_options must be >= 2")
        if self.review_quorum < 1:
            raise UsageError("bench.review_quorum must be >= 1")


@dataclass
class AttentionConfig:
    answer_layer: int = 24  # 1-indexed LLM layer whose map is reported
    connector_layer: int | None = None  # 1-indexed; None selects the last connector layer
    epsilon: float = 1e-6


@dataclass
class RuntimeConfig:
    workers: int = 4
    cache_enabled: bool = True
    master_seed: int = 0
    direct_synthesis: bool = False  # skip region cropping; synthesize on full images

    def validate(self) -> None:
        if self.workers < 1:
            raise UsageError("runtime.workers must be >= 1")


@dataclass
class PipelineConfig:
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    synthesis: SynthesisConfig = field(default_factory=SynthesisConfig)
    distill: DistillConfig = field(default_factory=DistillConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)
    attention: AttentionConfig = field(default_factory=AttentionConfig)
    runtime: RuntimeConfig = field(default_factory=RuntimeConfig)
    endpoints: dict[str, Any] = field(default_factory=dict)
    config_sha256: str = ""
    source_path: str | None = None

    ROLE_KEYS = (
        "question_generator",
        "teachers",
        "student",
        "judge",
        "inventory",
        "segmenter",
        "distractor",
        "classifier",
        "eval_model",
    )

    def teacher_endpoints(self) -> list[EndpointConfig]:
        return list(self.endpoints.get("teachers", []))

    def endpoint(self, role: str) -> EndpointConfig:
        if role not in self.endpoints:
            raise UsageError(f"no endpoint configured for role '{role}'")
        return self.endpoints[role]

    def validate(self) -> None:
        self.corpus.validate()
        # With no teachers configured, a run either uses the offline pair of
        # mock teachers or dies at client creation; bound-check against 2.
        self.synthesis.validate(n_teachers=len(self.teacher_endpoints()) or 2)
        self.distill.validate()
        self.bench.validate()
        self.runtime.validate()


def _parse_endpoints(data: dict[str, Any]) -> dict[str, Any]:
    unknown = set(data) - set(PipelineConfig.ROLE_KEYS)
    if unknown:
        raise UsageError(f"config section 'endpoints' has unknown roles: {sorted(unknown)}")
    parsed: dict[str, Any] = {}
    for role, value in data.items():
        if role == "teachers":
            if not isinstance(value, list):
                raise UsageError("endpoints.teachers must be a list")
            parsed[role] = [
                _build(EndpointConfig, dict(item), f"endpoints.teachers[{i}]")
                for i, item in enumerate(value)
            ]
        else:
            parsed[role] = _build(EndpointConfig, dict(value), f"endpoints.{role}")
    return parsed


_SECTIONS = {
    "corpus": CorpusConfig,
    "synthesis": SynthesisConfig,
    "distill": DistillConfig,
    "bench": BenchConfig,
    "attention": AttentionConfig,
    "runtime": RuntimeConfig,
}


def config_from_dict(data: dict[str, Any], *, checksum: str = "", source: str | None = None) -> PipelineConfig:
    unknown = set(data) - set(_SECTIONS) - {"endpoints"}
    if unknown:
        raise UsageError(f"config has unknown top-level sections: {sorted(unknown)}")
    kwargs: dict[str, Any] = {}
    for name, cls in _SECTIONS.items():
        raw = data.get(name, {})
        if not isinstance(raw, dict):
            raise UsageError(f"config section '{name}' must be a mapping")
        kwargs[name] = _build(cls, raw, name)
    config = PipelineConfig(
        endpoints=_parse_endpoints(data.get("endpoints", {})),
        config_sha256=checksum,
        source_path=source,
        **kwargs,
    )
    config.validate()
    return config


def load_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise UsageError(f"config file not found: {path}")
    raw = path.read_bytes()
    data = yaml.safe_load(raw.decode("utf-8")) or {}
    if not isinstance(data, dict):
        raise UsageError(f"config file {path} must contain a mapping")
    return config_from_dict(data, checksum=hashlib.sha256(raw).hexdigest(), source=str(path))


def default_config() -> PipelineConfig:
    return config_from_dict({})
