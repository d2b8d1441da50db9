"""Config loading: defaults, strict unknown-field rejection, validation bounds."""

from __future__ import annotations

import hashlib
from pathlib import Path

import pytest

from regionvqa.config import (
    DEFAULT_COORD_SUFFIX,
    DEFAULT_OVERLAY_SUFFIX,
    DIMENSIONS,
    GROUNDING_VARIANTS,
    EndpointConfig,
    config_from_dict,
    default_config,
    load_config,
)
from regionvqa.errors import UsageError

FIXTURES = Path(__file__).parent / "fixtures"


# -- defaults --------------------------------------------------------------------


def test_default_config_builds_and_validates():
    config = default_config()
    assert config.corpus.tau == 0.1
    assert config.corpus.min_dim == 800
    assert config.corpus.bench_fraction == 0.0
    assert config.corpus.max_proposals_per_image == 8
    assert config.corpus.min_box_px == 16
    assert config.synthesis.scale_factor == 2.0
    assert config.synthesis.samples_per_teacher == 4
    assert config.synthesis.consensus_threshold == 6
    assert config.synthesis.teacher_temperature == 1.0
    assert config.synthesis.max_answer_tokens == 64
    assert config.distill.variant == "bbox_in_image"
    assert config.distill.overlay_color == [255, 0, 0]
    assert config.distill.overlay_rel_width == 0.004
    assert config.distill.overlay_min_width == 3
    assert config.distill.trials == 4
    assert config.distill.max_correct == 2
    assert config.bench.mcq_fraction == 0.735
    assert config.bench.mcq_options == 4
    assert config.bench.review_quorum == 3
    assert config.attention.answer_layer == 24
    assert config.attention.connector_layer is None
    assert config.attention.epsilon == 1e-6
    assert config.runtime.cache_enabled is True
    assert config.runtime.master_seed == 0
    assert config.runtime.direct_synthesis is False
    assert config.endpoints == {}
    assert config.config_sha256 == ""
    assert config.source_path is None


def test_grounding_variant_and_dimension_tables_are_pinned():
    assert GROUNDING_VARIANTS == ("bbox_in_image", "bbox_in_question", "no_bbox")
    assert DIMENSIONS == ("counting", "ocr", "color", "structure", "material", "identification")


def test_default_suffix_strings_are_pinned():
    assert DEFAULT_OVERLAY_SUFFIX == "Answer based on the region inside the red bounding box."
    assert DEFAULT_COORD_SUFFIX == "Answer based on the region inside the bounding box {box}."


def test_endpoint_defaults():
    ep = EndpointConfig(endpoint_id="x")
    assert ep.model == "stub"
    assert ep.auth_env is None
    assert ep.requests_per_minute == 600
    assert ep.max_concurrency == 4
    assert ep.max_retries == 5
    assert ep.timeout == 120.0


# -- loading ---------------------------------------------------------------------


def test_load_fixture_config_wires_sections_and_endpoints():
    path = FIXTURES / "config.yaml"
    config = load_config(path)
    assert config.corpus.bench_fraction == 0.30
    assert config.bench.mcq_fraction == 0.30
    assert config.runtime.cache_enabled is False
    assert config.bench.annotator_tokens == {"tok-ada": "ada", "tok-bo": "bo", "tok-cy": "cy"}
    assert [t.endpoint_id for t in config.teacher_endpoints()] == ["teacher-a", "teacher-b"]
    assert config.endpoint("judge").model == "local-judge"
    assert config.source_path == str(path)


def test_checksum_is_sha256_of_file_bytes(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("runtime:\n  workers: 2\n")
    config = load_config(path)
    assert config.config_sha256 == hashlib.sha256(path.read_bytes()).hexdigest()
    assert config.runtime.workers == 2

    # even a comment-only change retags the config
    path2 = tmp_path / "c2.yaml"
    path2.write_text("# note\nruntime:\n  workers: 2\n")
    assert load_config(path2).config_sha256 != config.config_sha256


def test_empty_file_loads_as_defaults(tmp_path):
    path = tmp_path / "empty.yaml"
    path.write_text("")
    config = load_config(path)
    assert config.synthesis.consensus_threshold == 6
    assert config.config_sha256 == hashlib.sha256(b"").hexdigest()


def test_missing_file_is_a_usage_error(tmp_path):
    with pytest.raises(UsageError, match="not found"):
        load_config(tmp_path / "absent.yaml")


def test_non_mapping_file_is_rejected(tmp_path):
    path = tmp_path / "list.yaml"
    path.write_text("- a\n- b\n")
    with pytest.raises(UsageError, match="mapping"):
        load_config(path)


# -- strictness ---------------------------------------------------------------------


def test_unknown_top_level_section_is_rejected():
    with pytest.raises(UsageError, match="unknown top-level sections.*'synthesys'"):
        config_from_dict({"synthesys": {}})


def test_unknown_field_names_its_section():
    with pytest.raises(UsageError, match="section 'distill' has unknown fields.*'strok_width'"):
        config_from_dict({"distill": {"strok_width": 4}})


def test_unknown_endpoint_role_is_rejected():
    with pytest.raises(UsageError, match="unknown roles.*'referee'"):
        config_from_dict({"endpoints": {"referee": {"endpoint_id": "r"}}})


def test_teachers_must_be_a_list():
    with pytest.raises(UsageError, match="teachers must be a list"):
        config_from_dict({"endpoints": {"teachers": {"endpoint_id": "t"}}})


def test_teacher_entry_errors_name_their_index():
    with pytest.raises(UsageError, match=r"teachers\[1\]"):
        config_from_dict(
            {"endpoints": {"teachers": [{"endpoint_id": "a"}, {"endpoint_id": "b", "modle": "x"}]}}
        )


def test_section_must_be_a_mapping():
    with pytest.raises(UsageError, match="section 'corpus' must be a mapping"):
        config_from_dict({"corpus": [1, 2]})


def test_missing_endpoint_role_lookup_fails():
    with pytest.raises(UsageError, match="no endpoint configured for role 'judge'"):
        default_config().endpoint("judge")


# -- validation bounds ------------------------------------------------------------


@pytest.mark.parametrize(
    "section,overrides,match",
    [
        ("corpus", {"tau": 0.0}, "tau"),
        ("corpus", {"tau": 1.5}, "tau"),
        ("corpus", {"bench_fraction": -0.1}, "bench_fraction"),
        ("corpus", {"bench_fraction": 1.5}, "bench_fraction"),
        ("corpus", {"min_dim": 0}, "min_dim"),
        ("corpus", {"proposer": "magic"}, "proposer"),
        ("corpus", {"proposer": "precomputed"}, "annotations_path"),
        ("synthesis", {"scale_factor": 0.5}, "scale_factor"),
        ("synthesis", {"questions_per_crop": 0}, "questions_per_crop"),
        ("synthesis", {"consensus_threshold": 0}, "consensus_threshold"),
        ("synthesis", {"consensus_threshold": 8}, "consensus_threshold"),
        ("distill", {"variant": "arrow"}, "variant"),
        ("distill", {"trials": 0}, "trials"),
        ("distill", {"trials": 4, "max_correct": 5}, "max_correct"),
        ("distill", {"overlay_color": [255, 0]}, "overlay_color"),
        ("bench", {"mcq_fraction": 1.5}, "mcq_fraction"),
        ("bench", {"mcq_options": 1}, "mcq_options"),
        ("bench", {"review_quorum": 0}, "review_quorum"),
        ("runtime", {"workers": 0}, "workers"),
    ],
)
def test_out_of_range_values_are_rejected(section, overrides, match):
    with pytest.raises(UsageError, match=match):
        config_from_dict({section: overrides})


def test_consensus_threshold_bounds_follow_teacher_count():
    # two configured teachers give an eight-sample pool: 7 is a legal threshold
    teachers = [{"endpoint_id": "a"}, {"endpoint_id": "b"}]
    config = config_from_dict(
        {"synthesis": {"consensus_threshold": 7}, "endpoints": {"teachers": teachers}}
    )
    assert config.synthesis.consensus_threshold == 7
    # one configured teacher caps the pool at four samples
    with pytest.raises(UsageError, match="consensus_threshold"):
        config_from_dict(
            {"synthesis": {"consensus_threshold": 7}, "endpoints": {"teachers": teachers[:1]}}
        )
