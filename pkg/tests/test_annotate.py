from __future__ import annotations

import numpy as np
import pytest

from conftest import by_name
from repokg.annotate import (
    HierarchyCycle,
    UnannotatedChild,
    annotate_and_embed,
    annotate_graph,
    annotate_node,
    annotation_order,
    embed_graph,
    writable,
)
from repokg.encoders import NO_MEMBERS, BackendUnavailable, LocalDescriber, LocalEmbedder
from repokg.graph import CodeGraph


class FlakyDescriber(LocalDescriber):
    """Raises BackendUnavailable for inputs containing ``fail_on``."""

    def __init__(self, fail_on: str | None = None) -> None:
        super().__init__()
        self.fail_on = fail_on
        self.calls: list[str] = []

    def describe(self, text: str, mode: str) -> str:
        self.calls.append(mode)
        if self.fail_on is not None and self.fail_on in text:
            raise BackendUnavailable("down")
        return super().describe(text, mode)


def test_order_children_before_parents(fixture_graph):
    g = fixture_graph
    order = annotation_order(g)
    pos = {g.node(n).name: i for i, n in enumerate(order)}
    assert len(order) == 11
    assert pos["add"] < pos["Calculator"] < pos["base"]
    assert pos["precision"] < pos["base"] and pos["format_result"] < pos["base"]
    assert pos["divide"] < pos["Scientific"] < pos["extended"]
    assert {g.node(n).kind for n in order[-2:]} == {"Module"}


def test_single_module_graph():
    g = CodeGraph()
    m = g.add_node("Module", {"name": "m", "local_name": "m"})
    assert annotation_order(g) == [m]


def test_cycle_detected():
    g = CodeGraph()
    a = g.add_node("Function", {"name": "a", "module_name": "m"})
    b = g.add_node("Function", {"name": "b", "module_name": "m"})
    g.add_edge(a, b, "CONTAINS")
    g.add_edge(b, a, "CONTAINS")
    with pytest.raises(HierarchyCycle):
        annotation_order(g)


def test_small_entity_described_from_code(fixture_graph):
    g = fixture_graph
    add = by_name(g, "add")
    with writable(g):
        annotate_node(g, add, LocalDescriber())
    assert g.node(add).props["description"].startswith("add. Return the addition of two numbers.")
    assert g.node(add).props["member_descriptions"] == NO_MEMBERS


def test_composed_module_description(fixture_graph):
    g = fixture_graph
    annotate_graph(g, LocalDescriber(), size_limit=0)
    desc = g.node(by_name(g, "base", "Module")).props["description"]
    assert desc.startswith("Combines: ")
    for child in ("Calculator", "format_result", "precision"):
        assert f"{child}: " in desc
    members = g.node(by_name(g, "base", "Module")).props["member_descriptions"].split("\n")
    assert [m.split(" - ")[0] for m in members] == ["precision", "Calculator", "format_result"]


def test_composing_before_children_fails(fixture_graph):
    g = fixture_graph
    with writable(g), pytest.raises(UnannotatedChild):
        annotate_node(g, by_name(g, "base", "Module"), LocalDescriber(), size_limit=0)


def test_context_overflow_falls_back_to_composition(fixture_graph):
    g = fixture_graph
    report = annotate_graph(g, LocalDescriber(max_chars=250))
    calc = g.node(by_name(g, "Calculator")).props
    assert calc["description"].startswith("Combines: ")
    # a composition that still overflows is reported, not raised
    assert {g.node(n).kind for n in report.skipped} <= {"Module"}


def test_empty_code_never_crashes():
    g = CodeGraph()
    f = g.add_node("Function", {"name": "f", "module_name": "m", "code": ""})
    annotate_graph(g, LocalDescriber())
    assert g.node(f).props["description"] == "code."


def test_describer_failure_is_reported(fixture_graph):
    g = fixture_graph
    report = annotate_and_embed(g, FlakyDescriber(fail_on="def multiply"), LocalEmbedder())
    skipped = {g.node(n).name for n in report.skipped}
    assert "multiply" in skipped
    for nid, node in g.nodes.items():
        if node.kind != "Repo":
            assert node.embedding is not None or nid in report.unembedded
    assert set(report.unembedded) >= set(report.skipped)


def test_fixture_embeds_all_but_repo(annotated_graph):
    g = annotated_graph
    embedded = [n for n in g.nodes.values() if n.embedding is not None]
    assert len(embedded) == 11
    assert all(n.kind != "Repo" for n in embedded)
    for n in embedded:
        assert np.linalg.norm(n.embedding) == pytest.approx(1.0, abs=1e-6)
    assert g.frozen


def test_identical_text_identical_embedding():
    g = CodeGraph()
    a = g.add_node("Function", {"name": "a", "module_name": "m", "description": "same", "member_descriptions": "x"})
    b = g.add_node("Function", {"name": "b", "module_name": "m", "description": "same", "member_descriptions": "x"})
    c = g.add_node("Function", {"name": "c", "module_name": "m"})
    assert embed_graph(g, LocalEmbedder()) == 2
    assert g.node(a).embedding == g.node(b).embedding
    assert g.node(c).embedding is None


def test_bottom_up_never_reads_unannotated_child(fixture_graph):
    # composition raises UnannotatedChild on a missing child, so forcing every
    # entity through composition checks the order end to end
    report = annotate_graph(fixture_graph, LocalDescriber(), size_limit=0)
    assert report.annotated == 11 and report.skipped == []


def test_annotation_idempotent(annotated_graph, encoders):
    g = annotated_graph
    before = {n: dict(v.props) for n, v in g.nodes.items()}
    annotate_and_embed(g, encoders.describer, encoders.embedder)
    assert {n: dict(v.props) for n, v in g.nodes.items()} == before
