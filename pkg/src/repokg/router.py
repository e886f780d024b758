"""Dual-path retrieval: Cypher entity lookup first, MCTS exploration as fallback."""

from __future__ import annotations

import logging
import os
import re
import time
from dataclasses import dataclass, field
from typing import Any, Protocol

from repokg import cypher, mcts
from repokg.encoders import EncoderError, EncoderSuite, _HttpClient, load_prompt
from repokg.graph import CodeGraph

logger = logging.getLogger(__name__)

_BACKTICK = re.compile(r"`([^`]+)`")
_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_FENCE = re.compile(r"```(?:cypher)?\s*(.*?)```", re.S | re.I)

# preferred kind when one identifier names several entities
_KIND_ORDER = ("Class", "Function", "Method", "Module", "GlobalVariable", "Field")
_KIND_WORDS = {
    "class": "Class",
    "function": "Function",
    "method": "Method",
    "module": "Module",
    "file": "Module",
    "variable": "GlobalVariable",
    "constant": "GlobalVariable",
    "field": "Field",
    "attribute": "Field",
}
_METHODS = re.compile(r"\bmethods?\b", re.I)
_FIELDS = re.compile(r"\b(?:fields?|attributes?)\b", re.I)
_DEPS = re.compile(r"\b(?:dependenc(?:y|ies)|depends?|uses|calls)\b", re.I)


@dataclass(frozen=True)
class TranslationFailure:
    reason: str

    def __bool__(self) -> bool:
        return False


class QueryTranslator(Protocol):
    def translate(self, query: str, graph: CodeGraph) -> str | TranslationFailure: ...


def _looks_like_identifier(word: str) -> bool:
    if "_" in word.strip("_"):
        return True  # snake_case
    if word[0].isupper():
        return True  # CamelCase or Capitalized
    return any(c.isupper() for c in word[1:])  # camelCase


def _identifiers(query: str) -> list[tuple[str, bool]]:
    """Candidate identifiers in order; backticked ones first, flagged True."""
    quoted = [m.strip() for m in _BACKTICK.findall(query)]
    rest = _BACKTICK.sub(" ", query)
    out = [(q, True) for q in quoted if q]
    out += [(w, False) for w in _IDENT.findall(rest) if _looks_like_identifier(w)]
    return out


def _quote(text: str) -> str:
    return "'" + text.replace("\\", "\\\\").replace("'", "\\'") + "'"


def _best_hit(graph: CodeGraph, query: str) -> int | None:
    wanted = [k for w, k in _KIND_WORDS.items() if re.search(rf"\b{w}s?\b", query, re.I)]
    for ident, _ in _identifiers(query):
        name = ident.rsplit(".", 1)[-1] if "." in ident and not graph.lookup("Module", ident) else ident
        hits = [n for n in graph.lookup(None, ident) + graph.lookup(None, name) if graph.node(n).kind in _KIND_ORDER]
        if not hits:
            continue
        order = {k: i for i, k in enumerate(wanted + [k for k in _KIND_ORDER if k not in wanted])}
        return min(hits, key=lambda n: (order[graph.node(n).kind], n))
    return None


def _anchor(graph: CodeGraph, nid: int, var: str) -> str:
    """MATCH pattern pinning ``nid`` through its module (and class for members)."""
    node = graph.node(nid)
    head = f"({var}:{node.kind} {{name: {_quote(node.name)}}})"
    if node.kind == "Module":
        return head
    module = f"(m:Module {{name: {_quote(node.qualified_module)}}})"
    if node.kind in ("Method", "Field"):
        rel = "HAS_METHOD" if node.kind == "Method" else "HAS_FIELD"
        owner = f"(c:Class {{name: {_quote(node.props['class'])}}})"
        return f"{module}-[:CONTAINS]->{owner}-[:{rel}]->{head}"
    parents = [graph.node(p).kind for p, _ in graph.neighbors(nid, "in", ["CONTAINS"])]
    if "Module" in parents:
        return f"{module}-[:CONTAINS]->{head}"
    return head


def rule_based_translate(query: str, graph: CodeGraph) -> str | TranslationFailure:
    """Offline translator driven by identifiers found in the graph's name index."""
    nid = _best_hit(graph, query)
    if nid is None:
        return TranslationFailure("no identifier in the query names a graph entity")
    node = graph.node(nid)
    if node.kind == "Class" and _METHODS.search(query):
        return f"MATCH {_anchor(graph, nid, 'c')}-[:HAS_METHOD]->(x:Method)\nRETURN x"
    if node.kind == "Class" and _FIELDS.search(query):
        return f"MATCH {_anchor(graph, nid, 'c')}-[:HAS_FIELD]->(x:Field)\nRETURN x"
    if _DEPS.search(query):
        return (
            f"MATCH {_anchor(graph, nid, 'f')}\n"
            "OPTIONAL MATCH (f)-[:USES]->(dep)\n"
            "RETURN DISTINCT dep.name AS name, dep.signature AS signature, dep.code AS code"
        )
    return f"MATCH {_anchor(graph, nid, 'n')}\nOPTIONAL MATCH (n)-[:USES]->(dep)\nRETURN n, dep"


class RuleBasedTranslator:
    def __init__(self) -> None:
        self.calls = 0

    def translate(self, query: str, graph: CodeGraph) -> str | TranslationFailure:
        self.calls += 1
        return rule_based_translate(query, graph)


def strip_fences(text: str) -> str:
    m = _FENCE.search(text)
    return (m.group(1) if m else text).strip()


class HttpTranslator(_HttpClient):
    """LLM translator: POST {system, schema, query} to ``/translate``, read ``cypher``."""

    def __init__(self, url: str, prompt: str = "repobench_translator.txt", **kwargs: Any) -> None:
        super().__init__(url, **kwargs)
        self.system = load_prompt(prompt)
        self.schema = load_prompt("graph_schema.txt")

    def translate(self, query: str, graph: CodeGraph) -> str | TranslationFailure:
        data = self._post("/translate", {"system": self.system, "schema": self.schema, "query": query})
        text = data.get("cypher")
        if not isinstance(text, str) or not text.strip():
            return TranslationFailure("translator returned no query text")
        return strip_fences(text)


def make_translator(spec: str | None) -> QueryTranslator:
    spec = spec or os.environ.get("REPOKG_TRANSLATE_URL") or "local"
    return RuleBasedTranslator() if spec == "local" else HttpTranslator(spec)


@dataclass
class RetrievalResponse:
    path: str
    entity_rows: cypher.ResultTable | None = None
    ranked_nodes: mcts.SearchResult | None = None
    diagnostics: dict[str, Any] = field(default_factory=dict)

    def to_dict(self, graph: CodeGraph, timings: bool = True) -> dict[str, Any]:
        diag = {k: v for k, v in self.diagnostics.items() if timings or not k.endswith("_seconds")}
        out: dict[str, Any] = {"path": self.path, "diagnostics": diag}
        if self.entity_rows is not None:
            out["entity_rows"] = self.entity_rows.to_dict(graph)
        if self.ranked_nodes is not None:
            out["ranked_nodes"] = self.ranked_nodes.to_list(graph)
            out["partial"] = self.ranked_nodes.partial
        return out


def _try_entity(graph: CodeGraph, query: str, translator: QueryTranslator, diag: dict[str, Any]) -> cypher.ResultTable | None:
    start = time.perf_counter()
    try:
        text = translator.translate(query, graph)
    except EncoderError as exc:
        diag["translation_error"] = str(exc)
        return None
    finally:
        diag["translate_seconds"] = time.perf_counter() - start
    if isinstance(text, TranslationFailure):
        diag["translation_failure"] = text.reason
        return None
    diag["cypher"] = text
    try:
        table = cypher.run_entity_query(graph, text)
    except cypher.CypherError as exc:
        diag["cypher_error"] = f"{type(exc).__name__}: {exc}"
        return None
    return None if table.is_empty else table


def entity_lookup(graph: CodeGraph, query: str, translator: QueryTranslator) -> cypher.ResultTable | None:
    """Path 1 alone: the result table, or None when it is empty or unusable."""
    return _try_entity(graph, query, translator, {})


def route(
    graph: CodeGraph,
    query: str,
    translator: QueryTranslator | None = None,
    encoders: EncoderSuite | None = None,
    config: mcts.SearchConfig | None = None,
) -> RetrievalResponse:
    """Answer from a Cypher lookup when it yields rows, otherwise by MCTS search.

    Translation failures, unparseable or unsupported Cypher and empty
    tables all fall through to the search.
    """
    translator = translator or RuleBasedTranslator()
    diag: dict[str, Any] = {}
    table = _try_entity(graph, query, translator, diag)
    if table is not None:
        logger.info("entity path answered %r with %d rows", query, len(table.rows))
        return RetrievalResponse("entity", entity_rows=table, diagnostics=diag)
    encoders = encoders or EncoderSuite.local()
    config = config or mcts.SearchConfig.for_graph(graph)
    start = time.perf_counter()
    result = mcts.search(graph, query, encoders, config)
    diag["search_seconds"] = time.perf_counter() - start
    logger.info("search path answered %r with %d nodes", query, len(result.ranked))
    return RetrievalResponse("mcts", ranked_nodes=result, diagnostics=diag)
