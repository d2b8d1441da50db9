from __future__ import annotations

from pathlib import Path

import pytest

from regionvqa.client import ClientFactory
from regionvqa.config import load_config
from regionvqa.pipeline import ALL_STAGES, Pipeline

FIXTURES = Path(__file__).parent / "fixtures"
GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def golden_dir() -> Path:
    return GOLDEN


@pytest.fixture(scope="session")
def corpus_dir() -> Path:
    return FIXTURES / "corpus"


@pytest.fixture(scope="session")
def pipeline_config():
    return load_config(FIXTURES / "config.yaml")


@pytest.fixture()
def mock_factory(pipeline_config) -> ClientFactory:
    return ClientFactory(pipeline_config, mock=True, seed=0, cache=None)


@pytest.fixture(scope="session")
def full_run(pipeline_config, corpus_dir, tmp_path_factory):
    """One complete mock pipeline run shared by read-only tests."""
    root = tmp_path_factory.mktemp("fullrun")
    pipeline = Pipeline(
        pipeline_config,
        work_dir=root / "work",
        dataset_dir=root / "dataset",
        bench_dir=root / "bench",
        corpus_roots=[str(corpus_dir)],
        mock=True,
    )
    pipeline.run(ALL_STAGES)
    return pipeline


# ---------------------------------------------------------------------------
# acceptance reporting: each test in test_acceptance.py carries its criterion
# as the first docstring line; the summary prints one PASS/FAIL line each.

_ACCEPTANCE: dict[str, tuple[str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when == "call" and "test_acceptance" in item.nodeid:
        doc = (item.function.__doc__ or "").strip().splitlines()
        label = doc[0].strip() if doc else item.name
        status = "PASS" if report.passed else "FAIL"
        _ACCEPTANCE[item.nodeid] = (status, label)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for nodeid in sorted(_ACCEPTANCE):
        status, label = _ACCEPTANCE[nodeid]
        terminalreporter.write_line(f"[{status}] {label}")
