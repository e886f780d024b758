from __future__ import annotations

import json
import random
import string

import pytest

import example_queries as ex
from make_golden import ADDITION_QUERY, GOLDEN, addition_ranking
from repokg.cypher import NodeRef, parse_cypher
from repokg.encoders import EncoderSuite, LocalReranker
from repokg.graph import CodeGraph
from repokg.router import (
    RuleBasedTranslator,
    TranslationFailure,
    entity_lookup,
    route,
    rule_based_translate,
    strip_fences,
)


class CountingReranker(LocalReranker):
    def __init__(self) -> None:
        self.calls = 0

    def rerank(self, query, docs):
        self.calls += 1
        return super().rerank(query, docs)


class FixedTranslator:
    def __init__(self, text):
        self.text = text

    def translate(self, query, graph):
        return self.text


@pytest.fixture
def counting(encoders) -> EncoderSuite:
    return EncoderSuite(encoders.embedder, CountingReranker(), encoders.describer)


def row_names(g: CodeGraph, resp) -> set[str]:
    return {g.node(v.id).name for row in resp.entity_rows.rows for v in row if isinstance(v, NodeRef)}


def test_methods_question_takes_entity_path(annotated_graph, counting):
    g = annotated_graph
    resp = route(g, "What methods does Calculator have?", RuleBasedTranslator(), counting)
    assert resp.path == "entity"
    assert row_names(g, resp) == {"add", "multiply"}
    assert resp.ranked_nodes is None
    assert counting.reranker.calls == 0


def test_paraphrase_takes_search_path_and_matches_golden(annotated_graph, counting):
    g = annotated_graph
    resp = route(g, ADDITION_QUERY, RuleBasedTranslator(), counting)
    assert resp.path == "mcts" and resp.entity_rows is None
    assert "translation_failure" in resp.diagnostics
    golden = json.loads((GOLDEN / "addition_ranking.json").read_text())
    got = [g.node(r.node).item_id for r in resp.ranked_nodes.ranked]
    assert got == [e["item_id"] for e in golden["ranking"]]
    assert [r.score for r in resp.ranked_nodes.ranked] == pytest.approx([e["score"] for e in golden["ranking"]], abs=1e-9)
    assert "base::Method::Calculator.add" in got[:3]
    assert counting.reranker.calls > 0


def test_golden_file_is_current():
    assert json.loads((GOLDEN / "addition_ranking.json").read_text()) == addition_ranking()


def test_unparseable_translation_falls_back(annotated_graph):
    resp = route(annotated_graph, "anything", FixedTranslator("MATCH (n RETURN"))
    assert resp.path == "mcts"
    assert resp.diagnostics["cypher_error"].startswith("CypherSyntaxError")
    resp = route(annotated_graph, "anything", FixedTranslator("CREATE (n)"))
    assert resp.path == "mcts" and "UnsupportedConstruct" in resp.diagnostics["cypher_error"]


def test_empty_table_falls_back(annotated_graph):
    resp = route(annotated_graph, "q", FixedTranslator("MATCH (c:Class {name: 'Nope'}) RETURN c"))
    assert resp.path == "mcts" and resp.ranked_nodes.ranked


def test_show_class(fixture_graph):
    text = rule_based_translate("show class Calculator", fixture_graph)
    assert "(n:Class {name: 'Calculator'})" in text
    parse_cypher(text)
    assert entity_lookup(fixture_graph, "show class Calculator", RuleBasedTranslator()) is not None


def test_no_identifier_is_failure(fixture_graph):
    out = rule_based_translate("how do we sort things", fixture_graph)
    assert isinstance(out, TranslationFailure) and not out


def test_dependency_question_has_optional_uses_shape():
    g = ex.function_deps_graph()
    text = rule_based_translate("dependencies of `test_renderables`", g)
    assert "(f:Function {name: 'test_renderables'})" in text
    assert "OPTIONAL MATCH (f)-[:USES]->(dep)" in text
    assert "RETURN DISTINCT dep.name AS name, dep.signature AS signature, dep.code AS code" in text
    resp = route(g, "dependencies of `test_renderables`")
    assert resp.path == "entity"
    assert [r[0] for r in resp.entity_rows.rows] == ["render", "Segment"]


def test_demo_dependencies(fixture_graph):
    table = entity_lookup(fixture_graph, "what does `demo` depend on", RuleBasedTranslator())
    assert sorted(r[0] for r in table.rows) == ["Scientific", "format_result", "quick_add"]


def test_kind_word_breaks_ties():
    g = CodeGraph()
    g.add_node("Module", {"name": "Parser", "local_name": "Parser"})
    g.add_node("Class", {"name": "Parser", "module_name": "x"})
    assert "(n:Module" in rule_based_translate("open the Parser module", g)
    assert "(n:Class" in rule_based_translate("show Parser", g)


def test_strip_fences():
    assert strip_fences("```cypher\nMATCH (n) RETURN n\n```") == "MATCH (n) RETURN n"
    assert strip_fences("  MATCH (n) RETURN n ") == "MATCH (n) RETURN n"


def test_route_is_total(annotated_graph):
    rng = random.Random(2)
    alphabet = string.printable + "`é中"
    g = annotated_graph
    names = [n.name for n in g.nodes.values()]
    for _ in range(200):
        words = ["".join(rng.choice(alphabet) for _ in range(rng.randint(0, 8))) for _ in range(rng.randint(0, 6))]
        if rng.random() < 0.4:
            words.insert(rng.randrange(len(words) + 1), rng.choice(names))
        if rng.random() < 0.2:
            words.insert(0, "methods of")
        resp = route(g, " ".join(words), config=None)
        assert resp.path in ("entity", "mcts")
        # exactly one result kind is populated
        assert (resp.entity_rows is None) != (resp.ranked_nodes is None)
        if resp.path == "entity":
            assert not resp.entity_rows.is_empty
        else:
            assert resp.ranked_nodes.ranked  # the graph has embedded nodes


def test_response_json(annotated_graph):
    g = annotated_graph
    data = route(g, "What methods does Calculator have?").to_dict(g, timings=False)
    assert data["path"] == "entity"
    assert not any(k.endswith("_seconds") for k in data["diagnostics"])
    assert json.loads(json.dumps(data)) == data
    data = route(g, ADDITION_QUERY).to_dict(g)
    assert data["path"] == "mcts" and data["partial"] is False
    assert data["ranked_nodes"][0]["node"]["name"] == "add"
