"""Typed property graph of code entities.

Node ids are dense integers assigned on insertion and never reused.  Edges
are unique per ``(src, dst, kind)`` and every mutation is checked against
the schema: a node kind carries only its own properties, and each edge kind
only connects the endpoint kinds listed in ``LEGAL_EDGES``.
"""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import IO, Any, Iterable, Iterator

FORMAT_VERSION = 1

NODE_KINDS = ("Repo", "Module", "Class", "Function", "Method", "Field", "GlobalVariable", "Import")
EDGE_KINDS = ("CONTAINS", "HAS_METHOD", "HAS_FIELD", "INHERITS", "USES")

_ANNOTATION = ("description", "member_descriptions")

# property names allowed per kind; `name` is required everywhere
NODE_PROPERTIES: dict[str, frozenset[str]] = {
    "Repo": frozenset({"name"}),
    "Module": frozenset({"name", "local_name", "code", "signature", *_ANNOTATION}),
    "Class": frozenset({"name", "signature", "code", "module_name", *_ANNOTATION}),
    "Function": frozenset({"name", "signature", "code", "module_name", *_ANNOTATION}),
    "Method": frozenset({"name", "class", "signature", "code", "module_name", *_ANNOTATION}),
    "Field": frozenset({"name", "class", "code", "module_name", *_ANNOTATION}),
    "GlobalVariable": frozenset({"name", "code", "module_name", *_ANNOTATION}),
    "Import": frozenset({"name", "module", "alias", "dotted_folder_name", "module_name", "star"}),
}
REQUIRED_PROPERTIES: dict[str, frozenset[str]] = {
    "Repo": frozenset({"name"}),
    "Module": frozenset({"name", "local_name"}),
    "Class": frozenset({"name", "module_name"}),
    "Function": frozenset({"name", "module_name"}),
    "Method": frozenset({"name", "module_name", "class"}),
    "Field": frozenset({"name", "class"}),
    "GlobalVariable": frozenset({"name", "module_name"}),
    "Import": frozenset({"name", "module"}),
}

_CODE = frozenset({"Class", "Function", "Method", "GlobalVariable"})
LEGAL_EDGES: dict[str, tuple[frozenset[str], frozenset[str]]] = {
    # nested classes/functions hang off their lexical parent
    "CONTAINS": (
        frozenset({"Repo", "Module", "Class", "Function", "Method"}),
        frozenset({"Module", "Class", "Function", "GlobalVariable"}),
    ),
    "HAS_METHOD": (frozenset({"Class"}), frozenset({"Method"})),
    "HAS_FIELD": (frozenset({"Class"}), frozenset({"Field"})),
    "INHERITS": (frozenset({"Class"}), frozenset({"Class", "Import"})),
    "USES": (_CODE, _CODE | {"Module", "Import"}),
}
# CONTAINS sources that may only point at specific targets
_CONTAINS_BY_SOURCE = {
    "Repo": frozenset({"Module", "Class", "Function", "GlobalVariable"}),
    "Module": frozenset({"Module", "Class", "Function", "GlobalVariable"}),
    "Class": frozenset({"Class", "Function"}),
    "Function": frozenset({"Class", "Function"}),
    "Method": frozenset({"Class", "Function"}),
}


class GraphError(Exception):
    pass


class IllegalEndpointKind(GraphError):
    pass


class MissingEndpoint(GraphError):
    pass


class UnknownNode(GraphError, KeyError):
    pass


class SameNode(GraphError):
    pass


class SchemaViolation(GraphError):
    pass


class FrozenGraph(GraphError):
    pass


class CorruptStream(GraphError):
    pass


def edge_is_legal(src_kind: str, kind: str, dst_kind: str) -> bool:
    if kind not in LEGAL_EDGES:
        return False
    sources, targets = LEGAL_EDGES[kind]
    if src_kind not in sources or dst_kind not in targets:
        return False
    if kind == "CONTAINS":
        return dst_kind in _CONTAINS_BY_SOURCE[src_kind]
    return True


@dataclass
class Node:
    id: int
    kind: str
    props: dict[str, str] = field(default_factory=dict)
    embedding: tuple[float, ...] | None = None

    @property
    def name(self) -> str:
        return self.props["name"]

    def get(self, key: str, default: Any = None) -> Any:
        if key == "embedding":
            return self.embedding
        return self.props.get(key, default)

    @property
    def description_text(self) -> str:
        """Description and member descriptions joined by a newline."""
        return f"{self.props.get('description', '')}\n{self.props.get('member_descriptions', '')}"

    @property
    def has_description(self) -> bool:
        return bool(self.props.get("description") or self.props.get("member_descriptions"))

    @property
    def qualified_module(self) -> str:
        if self.kind == "Module":
            return self.props["name"]
        return self.props.get("module_name", "")

    @property
    def item_id(self) -> str:
        """``module_name::kind::name``; methods and fields use ``Class.name``."""
        name = self.props["name"]
        if self.kind in ("Method", "Field"):
            name = f"{self.props['class']}.{name}"
        return f"{self.qualified_module}::{self.kind}::{name}"

    def stub(self) -> dict[str, Any]:
        return {"kind": self.kind, "name": self.props.get("name"), "module_name": self.qualified_module or None}


def _check_props(kind: str, props: dict[str, Any]) -> None:
    if kind not in NODE_PROPERTIES:
        raise SchemaViolation(f"unknown node kind {kind!r}")
    extra = set(props) - NODE_PROPERTIES[kind]
    if extra:
        raise SchemaViolation(f"{kind} does not carry {sorted(extra)}")
    missing = REQUIRED_PROPERTIES[kind] - {k for k, v in props.items() if v is not None}
    if missing:
        raise SchemaViolation(f"{kind} requires {sorted(missing)}")
    for key, value in props.items():
        if value is not None and not isinstance(value, str):
            raise SchemaViolation(f"{kind}.{key} must be a string")


class CodeGraph:
    """Property graph with per-kind adjacency and a (kind, name) index."""

    def __init__(self, dim: int | None = None) -> None:
        self.nodes: dict[int, Node] = {}
        self.dim = dim
        self._next_id = 0
        self._out: dict[int, dict[str, set[int]]] = {}
        self._in: dict[int, dict[str, set[int]]] = {}
        self._index: dict[tuple[str, str], set[int]] = defaultdict(set)
        self.frozen = False

    # -- mutation ---------------------------------------------------------
    def _mutable(self) -> None:
        if self.frozen:
            raise FrozenGraph("graph is frozen")

    def freeze(self) -> CodeGraph:
        self.frozen = True
        return self

    def thaw(self) -> CodeGraph:
        self.frozen = False
        return self

    def add_node(self, kind: str, props: dict[str, Any] | None = None, embedding: Iterable[float] | None = None) -> int:
        self._mutable()
        clean = {k: v for k, v in (props or {}).items() if v is not None}
        _check_props(kind, clean)
        nid = self._next_id
        self._next_id += 1
        node = Node(nid, kind, clean)
        self.nodes[nid] = node
        self._out[nid] = {}
        self._in[nid] = {}
        self._index[(kind, clean["name"])].add(nid)
        if embedding is not None:
            self.set_embedding(nid, embedding)
        return nid

    def add_edge(self, src: int, dst: int, kind: str) -> bool:
        """Add ``src -kind-> dst``; returns False when the edge already existed."""
        self._mutable()
        if src not in self.nodes or dst not in self.nodes:
            raise MissingEndpoint(f"{src} -> {dst}")
        if src == dst:
            raise IllegalEndpointKind(f"self-loop on {src}")
        s, d = self.nodes[src].kind, self.nodes[dst].kind
        if not edge_is_legal(s, kind, d):
            raise IllegalEndpointKind(f"{s} -{kind}-> {d}")
        targets = self._out[src].setdefault(kind, set())
        if dst in targets:
            return False
        targets.add(dst)
        self._in[dst].setdefault(kind, set()).add(src)
        return True

    def remove_edge(self, src: int, dst: int, kind: str) -> None:
        self._mutable()
        self._out[src].get(kind, set()).discard(dst)
        self._in[dst].get(kind, set()).discard(src)

    def remove_node(self, nid: int) -> None:
        self._mutable()
        node = self._node(nid)
        if node.kind == "Import" and self.in_degree(nid):
            raise GraphError(f"Import node {nid} still has incoming edges")
        for kind, srcs in self._in[nid].items():
            for s in srcs:
                self._out[s][kind].discard(nid)
        for kind, dsts in self._out[nid].items():
            for d in dsts:
                self._in[d][kind].discard(nid)
        del self._out[nid], self._in[nid], self.nodes[nid]
        key = (node.kind, node.props["name"])
        self._index[key].discard(nid)
        if not self._index[key]:
            del self._index[key]

    def set_property(self, nid: int, key: str, value: str | None) -> None:
        self._mutable()
        node = self._node(nid)
        if key == "name":
            raise SchemaViolation("name is immutable")
        props = dict(node.props)
        if value is None:
            props.pop(key, None)
        else:
            props[key] = value
        _check_props(node.kind, props)
        node.props = props

    def set_embedding(self, nid: int, vector: Iterable[float] | None) -> None:
        self._mutable()
        node = self._node(nid)
        if vector is None:
            node.embedding = None
            return
        vec = tuple(float(x) for x in vector)
        if self.dim is None:
            self.dim = len(vec)
        if len(vec) != self.dim:
            raise SchemaViolation(f"embedding dimension {len(vec)} != {self.dim}")
        norm = math.sqrt(math.fsum(x * x for x in vec))
        if abs(norm - 1.0) > 1e-6:
            raise SchemaViolation(f"embedding norm {norm} is not 1")
        node.embedding = vec

    def redirect_incoming_edges(self, src: int, dst: int) -> int:
        """Point every edge into ``src`` at ``dst`` instead.

        Returns the number of edges moved.  Edges that would duplicate an
        existing one, or become a self-loop on ``dst``, collapse away.
        """
        self._mutable()
        self._node(src)
        self._node(dst)
        if src == dst:
            raise SameNode(str(src))
        moved = 0
        dst_kind = self.nodes[dst].kind
        incoming = [(x, kind) for kind, xs in self._in[src].items() for x in xs]
        for x, kind in incoming:
            if x != dst and not edge_is_legal(self.nodes[x].kind, kind, dst_kind):
                raise IllegalEndpointKind(f"{self.nodes[x].kind} -{kind}-> {dst_kind}")
        for x, kind in sorted(incoming):
            self._out[x][kind].discard(src)
            self._in[src][kind].discard(x)
            moved += 1
            if x == dst:
                continue
            self._out[x].setdefault(kind, set()).add(dst)
            self._in[dst].setdefault(kind, set()).add(x)
        return moved

    # -- queries ----------------------------------------------------------
    def _node(self, nid: int) -> Node:
        try:
            return self.nodes[nid]
        except KeyError:
            raise UnknownNode(nid) from None

    def node(self, nid: int) -> Node:
        return self._node(nid)

    def __contains__(self, nid: object) -> bool:
        return nid in self.nodes

    def __len__(self) -> int:
        return len(self.nodes)

    def lookup(self, kind: str | None, name: str) -> list[int]:
        if kind is None:
            return sorted(i for (k, n), ids in self._index.items() if n == name for i in ids)
        return sorted(self._index.get((kind, name), ()))

    def names(self) -> set[str]:
        return {n for (_, n) in self._index}

    def nodes_of_kind(self, kind: str) -> list[int]:
        return sorted(i for i, n in self.nodes.items() if n.kind == kind)

    def neighbors(
        self,
        nid: int,
        direction: str = "out",
        kinds: Iterable[str] | None = None,
    ) -> list[tuple[int, str]]:
        """Adjacent ``(node id, edge kind)`` pairs sorted by id then kind."""
        self._node(nid)
        wanted = set(kinds) if kinds is not None else None
        out: set[tuple[int, str]] = set()
        if direction not in ("out", "in", "both"):
            raise ValueError(f"bad direction {direction!r}")
        tables = []
        if direction in ("out", "both"):
            tables.append(self._out[nid])
        if direction in ("in", "both"):
            tables.append(self._in[nid])
        for table in tables:
            for kind, ids in table.items():
                if wanted is None or kind in wanted:
                    out.update((i, kind) for i in ids)
        return sorted(out)

    def neighbor_ids(self, nid: int) -> list[int]:
        """Distinct neighbours in either direction over all edge kinds."""
        ids: set[int] = set()
        for table in (self._out[nid], self._in[nid]):
            for xs in table.values():
                ids.update(xs)
        return sorted(ids)

    def in_degree(self, nid: int) -> int:
        return sum(len(x) for x in self._in[nid].values())

    def out_degree(self, nid: int) -> int:
        return sum(len(x) for x in self._out[nid].values())

    def edges(self) -> Iterator[tuple[int, int, str]]:
        """All edges as ``(src, dst, kind)``, ordered by src, kind, dst."""
        for src in sorted(self._out):
            for kind in sorted(self._out[src]):
                for dst in sorted(self._out[src][kind]):
                    yield src, dst, kind

    def edge_count(self) -> int:
        return sum(len(x) for table in self._out.values() for x in table.values())

    def has_edge(self, src: int, dst: int, kind: str) -> bool:
        return dst in self._out.get(src, {}).get(kind, ())

    def check_consistency(self) -> None:
        """Raise SchemaViolation if adjacency, index or schema disagree."""
        for src, dst, kind in self.edges():
            if dst not in self.nodes or src not in self._in[dst].get(kind, ()):
                raise SchemaViolation(f"dangling edge {src}->{dst}")
            if not edge_is_legal(self.nodes[src].kind, kind, self.nodes[dst].kind):
                raise SchemaViolation(f"illegal edge {src}-{kind}->{dst}")
        for dst, table in self._in.items():
            for kind, srcs in table.items():
                for src in srcs:
                    if dst not in self._out[src].get(kind, ()):
                        raise SchemaViolation(f"dangling reverse edge {src}->{dst}")
        for (kind, name), ids in self._index.items():
            for i in ids:
                n = self.nodes[i]
                if (n.kind, n.props["name"]) != (kind, name):
                    raise SchemaViolation(f"index entry {kind}/{name} is stale")
        if sum(len(v) for v in self._index.values()) != len(self.nodes):
            raise SchemaViolation("index does not cover every node")

    # -- serialization ------------------------------------------------------
    def dump(self, fp: IO[str]) -> None:
        self.check_consistency()
        header = {
            "t": "h",
            "version": FORMAT_VERSION,
            "dim": self.dim,
            "next_id": self._next_id,
            "nodes": len(self.nodes),
            "edges": self.edge_count(),
            "frozen": self.frozen,
        }
        fp.write(json.dumps(header, sort_keys=True) + "\n")
        for nid in sorted(self.nodes):
            n = self.nodes[nid]
            rec: dict[str, Any] = {"t": "n", "id": nid, "kind": n.kind, **n.props}
            if n.embedding is not None:
                rec["embedding"] = list(n.embedding)
            fp.write(json.dumps(rec, sort_keys=True, ensure_ascii=False) + "\n")
        for src, dst, kind in self.edges():
            fp.write(json.dumps({"t": "e", "src": src, "dst": dst, "kind": kind}, sort_keys=True) + "\n")

    def dumps(self) -> str:
        import io

        buf = io.StringIO()
        self.dump(buf)
        return buf.getvalue()

    def serialize(self) -> bytes:
        return self.dumps().encode("utf-8")

    @classmethod
    def loads(cls, text: str) -> CodeGraph:
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        try:
            records = [json.loads(line) for line in lines]
        except json.JSONDecodeError as exc:
            raise CorruptStream(f"bad JSON: {exc}") from exc
        if not records or not isinstance(records[0], dict) or records[0].get("t") != "h":
            raise CorruptStream("missing header")
        header = records[0]
        if header.get("version") != FORMAT_VERSION:
            raise CorruptStream(f"unsupported version {header.get('version')!r}")
        graph = cls(dim=header.get("dim"))
        n_nodes = n_edges = 0
        try:
            for rec in records[1:]:
                t = rec.get("t")
                if t == "n":
                    nid = int(rec["id"])
                    kind = rec["kind"]
                    props = {k: v for k, v in rec.items() if k not in ("t", "id", "kind", "embedding")}
                    _check_props(kind, props)
                    if nid in graph.nodes:
                        raise CorruptStream(f"duplicate node id {nid}")
                    node = Node(nid, kind, props)
                    graph.nodes[nid] = node
                    graph._out[nid] = {}
                    graph._in[nid] = {}
                    graph._index[(kind, props["name"])].add(nid)
                    if "embedding" in rec:
                        graph.set_embedding(nid, rec["embedding"])
                    n_nodes += 1
                elif t == "e":
                    if not graph.add_edge(int(rec["src"]), int(rec["dst"]), rec["kind"]):
                        raise CorruptStream("duplicate edge")
                    n_edges += 1
                else:
                    raise CorruptStream(f"unknown record type {t!r}")
        except CorruptStream:
            raise
        except (GraphError, KeyError, TypeError, ValueError) as exc:
            raise CorruptStream(str(exc)) from exc
        if n_nodes != header.get("nodes") or n_edges != header.get("edges"):
            raise CorruptStream("record count does not match header (truncated stream?)")
        next_id = header.get("next_id", 0)
        if graph.nodes and next_id <= max(graph.nodes):
            raise CorruptStream("next_id below existing ids")
        graph._next_id = next_id
        graph.frozen = bool(header.get("frozen", False))
        return graph

    @classmethod
    def deserialize(cls, data: bytes) -> CodeGraph:
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CorruptStream(str(exc)) from exc
        return cls.loads(text)

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fp:
            self.dump(fp)

    @classmethod
    def load(cls, path: str) -> CodeGraph:
        with open(path, "rb") as fp:
            return cls.deserialize(fp.read())

    def copy(self) -> CodeGraph:
        return CodeGraph.loads(self.dumps())


def add_node(graph: CodeGraph, kind: str, props: dict[str, Any] | None = None) -> int:
    return graph.add_node(kind, props)


def add_edge(graph: CodeGraph, src: int, dst: int, kind: str) -> None:
    graph.add_edge(src, dst, kind)


def neighbors(graph: CodeGraph, nid: int, direction: str = "out", kinds: Iterable[str] | None = None) -> list[tuple[int, str]]:
    return graph.neighbors(nid, direction, kinds)


def redirect_incoming_edges(graph: CodeGraph, src: int, dst: int) -> int:
    return graph.redirect_incoming_edges(src, dst)


def remove_node(graph: CodeGraph, nid: int) -> None:
    graph.remove_node(nid)


def serialize(graph: CodeGraph) -> bytes:
    return graph.serialize()


def deserialize(data: bytes) -> CodeGraph:
    return CodeGraph.deserialize(data)
