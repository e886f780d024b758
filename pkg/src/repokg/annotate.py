"""Bottom-up description and embedding of graph nodes."""

from __future__ import annotations

import contextlib
import heapq
import logging
from dataclasses import dataclass, field
from typing import Iterator

from repokg.encoders import NO_MEMBERS, BackendUnavailable, ContextOverflow, Describer, Embedder, EncoderError
from repokg.graph import CodeGraph

logger = logging.getLogger(__name__)

HIERARCHY = ("CONTAINS", "HAS_METHOD", "HAS_FIELD")
DEFAULT_SIZE_LIMIT = 6000
_ALWAYS_SMALL = ("Field", "GlobalVariable")


class HierarchyCycle(Exception):
    pass


class UnannotatedChild(Exception):
    """A node was annotated before one of its hierarchical children."""


class DescriberUnavailable(BackendUnavailable):
    pass


class EmbedderUnavailable(BackendUnavailable):
    pass


@dataclass
class AnnotationReport:
    annotated: int = 0
    skipped: list[int] = field(default_factory=list)
    embedded: int = 0
    unembedded: list[int] = field(default_factory=list)


@contextlib.contextmanager
def writable(graph: CodeGraph) -> Iterator[CodeGraph]:
    was_frozen = graph.frozen
    graph.thaw()
    try:
        yield graph
    finally:
        if was_frozen:
            graph.freeze()


def _annotatable(graph: CodeGraph) -> list[int]:
    return sorted(i for i, n in graph.nodes.items() if n.kind not in ("Repo", "Import"))


def hierarchy_children(graph: CodeGraph, nid: int) -> list[int]:
    return sorted({i for i, _ in graph.neighbors(nid, "out", HIERARCHY)} - set(graph.nodes_of_kind("Repo")))


def annotation_order(graph: CodeGraph) -> list[int]:
    """Children-before-parents order over the containment hierarchy.

    Among nodes whose children are all placed, non-modules go before
    modules and then the smallest id goes first, so modules come last and
    the order is deterministic.
    """
    nodes = _annotatable(graph)
    member = set(nodes)
    pending = {n: len([c for c in hierarchy_children(graph, n) if c in member]) for n in nodes}
    parents: dict[int, list[int]] = {n: [] for n in nodes}
    for n in nodes:
        for c in hierarchy_children(graph, n):
            if c in member:
                parents[c].append(n)
    def key(n: int) -> tuple[bool, int]:
        return graph.node(n).kind == "Module", n

    ready = [key(n) for n, k in pending.items() if k == 0]
    heapq.heapify(ready)
    order: list[int] = []
    while ready:
        _, n = heapq.heappop(ready)
        order.append(n)
        for p in parents[n]:
            pending[p] -= 1
            if pending[p] == 0:
                heapq.heappush(ready, key(p))
    if len(order) != len(nodes):
        stuck = sorted(set(nodes) - set(order))
        raise HierarchyCycle(f"hierarchy cycle through nodes {stuck[:10]}")
    return order


def _first_line(text: str) -> str:
    return text.strip().split("\n", 1)[0] if text else ""


def annotate_node(
    graph: CodeGraph,
    nid: int,
    describer: Describer,
    size_limit: int = DEFAULT_SIZE_LIMIT,
    skipped: set[int] | None = None,
) -> None:
    """Set ``description`` and ``member_descriptions`` on one node.

    Entities whose code fits in ``size_limit`` characters (and every Field
    or GlobalVariable) are described from their code; larger ones, or ones
    the describer rejects as too long, are composed from their children's
    descriptions.
    """
    node = graph.node(nid)
    code = node.props.get("code", "")
    if node.kind in _ALWAYS_SMALL or len(code) <= size_limit:
        try:
            description = describer.describe(code, "summarize_code")
            members = describer.describe(code, "list_members")
        except ContextOverflow:
            description, members = _compose(graph, nid, describer, skipped)
    else:
        description, members = _compose(graph, nid, describer, skipped)
    graph.set_property(nid, "description", description)
    graph.set_property(nid, "member_descriptions", members)


def _compose(graph: CodeGraph, nid: int, describer: Describer, skipped: set[int] | None) -> tuple[str, str]:
    parts: list[str] = []
    members: list[str] = []
    for child in hierarchy_children(graph, nid):
        c = graph.node(child)
        desc = c.props.get("description")
        if desc is None:
            if skipped is not None and child in skipped:
                continue
            raise UnannotatedChild(f"node {nid} composed before child {child}")
        parts.append(f"{c.name}: {desc}")
        members.append(f"{c.name} - {_first_line(desc)}")
    description = describer.describe("\n".join(parts), "summarize_from_members")
    return description, "\n".join(members) if members else NO_MEMBERS


def annotate_graph(
    graph: CodeGraph,
    describer: Describer,
    size_limit: int = DEFAULT_SIZE_LIMIT,
) -> AnnotationReport:
    report = AnnotationReport()
    skipped: set[int] = set()
    with writable(graph):
        for nid in annotation_order(graph):
            try:
                annotate_node(graph, nid, describer, size_limit, skipped)
            except EncoderError as exc:
                logger.warning("describer failed on node %d: %s", nid, exc)
                skipped.add(nid)
                report.skipped.append(nid)
                continue
            report.annotated += 1
    return report


def embed_graph(graph: CodeGraph, embedder: Embedder, batch_size: int = 64) -> int:
    """Embed ``description + "\\n" + member_descriptions`` of every described node."""
    todo = [nid for nid in _annotatable(graph) if graph.node(nid).has_description]
    count = 0
    with writable(graph):
        for start in range(0, len(todo), batch_size):
            batch = todo[start : start + batch_size]
            texts = [graph.node(n).description_text for n in batch]
            try:
                vectors = embedder.embed(texts)
            except BackendUnavailable as exc:
                raise EmbedderUnavailable(str(exc)) from exc
            for nid, vec in zip(batch, vectors):
                graph.set_embedding(nid, vec)
                count += 1
    return count


def annotate_and_embed(
    graph: CodeGraph,
    describer: Describer,
    embedder: Embedder,
    size_limit: int = DEFAULT_SIZE_LIMIT,
) -> AnnotationReport:
    report = annotate_graph(graph, describer, size_limit)
    report.embedded = embed_graph(graph, embedder)
    report.unembedded = [n for n in _annotatable(graph) if graph.node(n).embedding is None]
    return report
