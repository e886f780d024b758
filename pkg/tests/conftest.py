from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from repokg.annotate import annotate_and_embed  # noqa: E402
from repokg.builder import build  # noqa: E402
from repokg.encoders import EncoderSuite  # noqa: E402
from repokg.fixtures import two_file_fixture  # noqa: E402
from repokg.graph import CodeGraph  # noqa: E402

REPO_ROOT = Path(__file__).resolve().parents[1]
FIXTURE_DIR = REPO_ROOT / "fixtures" / "two_file"


def by_name(graph: CodeGraph, name: str, kind: str | None = None) -> int:
    hits = graph.lookup(kind, name)
    assert len(hits) == 1, (name, hits)
    return hits[0]


@pytest.fixture
def encoders() -> EncoderSuite:
    return EncoderSuite.local()


@pytest.fixture
def fixture_graph() -> CodeGraph:
    return build(two_file_fixture(), "demo")


@pytest.fixture
def annotated_graph(fixture_graph: CodeGraph, encoders: EncoderSuite) -> CodeGraph:
    annotate_and_embed(fixture_graph, encoders.describer, encoders.embedder)
    return fixture_graph


def pytest_terminal_summary(terminalreporter) -> None:
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is None or not acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(acceptance.RESULTS):
        terminalreporter.write_line(acceptance.report_line(number))
