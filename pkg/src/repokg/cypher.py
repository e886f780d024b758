"""A read-only Cypher subset over CodeGraph.

Supported: ``MATCH`` / ``OPTIONAL MATCH`` with chains of node patterns
``(var:Label {key: 'value'})`` joined by single-kind directed relationships
``-[:KIND]->`` or ``<-[:KIND]-``, ``RETURN [DISTINCT]`` of ``var``,
``var.prop`` and ``labels(var)`` with optional ``AS`` aliases, and
``UNION`` / ``UNION ALL``.  Anything else raises UnsupportedConstruct.

Matching is homomorphic: distinct pattern nodes may bind the same graph
node.  Rows come out ordered by the ids bound to the block's variables.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Iterator, Sequence

from repokg.graph import CodeGraph

KEYWORDS = {"MATCH", "OPTIONAL", "RETURN", "DISTINCT", "AS", "UNION", "ALL"}
UNSUPPORTED = {
    "CREATE", "MERGE", "DELETE", "DETACH", "SET", "REMOVE", "WHERE", "WITH", "ORDER",
    "LIMIT", "SKIP", "UNWIND", "CALL", "FOREACH", "LOAD", "YIELD", "USE", "FOR",
}  # fmt: skip


class CypherError(Exception):
    pass


class CypherSyntaxError(CypherError):
    def __init__(self, message: str, position: int, expected: Sequence[str] = (), text: str = "") -> None:
        line = text.count("\n", 0, position) + 1
        col = position - (text.rfind("\n", 0, position) + 1) + 1
        where = f"line {line}, column {col}"
        exp = f" (expected {', '.join(expected)})" if expected else ""
        super().__init__(f"{message} at {where}{exp}")
        self.position = position
        self.expected = tuple(expected)
        self.line = line
        self.column = col


class UnsupportedConstruct(CypherError):
    def __init__(self, name: str) -> None:
        super().__init__(f"unsupported Cypher construct: {name}")
        self.name = name


@dataclass(frozen=True)
class Token:
    kind: str  # ident | string | number | punct | eof
    value: str
    pos: int
    quoted: bool = False


_PUNCT2 = ("->", "<-")
_PUNCT1 = "()[]{}:,.-<>*|=+;$"


def tokenize(text: str) -> list[Token]:
    out: list[Token] = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
        elif text.startswith("//", i):
            j = text.find("\n", i)
            i = n if j < 0 else j
        elif ch in "'\"":
            j, buf = i + 1, []
            while j < n and text[j] != ch:
                if text[j] == "\\" and j + 1 < n:
                    esc = text[j + 1]
                    buf.append({"n": "\n", "t": "\t", "r": "\r"}.get(esc, esc))
                    j += 2
                else:
                    buf.append(text[j])
                    j += 1
            if j >= n:
                raise CypherSyntaxError("unterminated string", i, ("closing quote",), text)
            out.append(Token("string", "".join(buf), i))
            i = j + 1
        elif ch == "`":
            j = text.find("`", i + 1)
            if j < 0:
                raise CypherSyntaxError("unterminated identifier", i, ("`",), text)
            out.append(Token("ident", text[i + 1 : j], i, quoted=True))
            i = j + 1
        elif ch.isalpha() or ch == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            out.append(Token("ident", text[i:j], i))
            i = j
        elif ch.isdigit():
            j = i
            while j < n and (text[j].isdigit() or text[j] == "."):
                j += 1
            out.append(Token("number", text[i:j], i))
            i = j
        elif text.startswith(_PUNCT2, i):
            out.append(Token("punct", text[i : i + 2], i))
            i += 2
        elif ch in _PUNCT1:
            out.append(Token("punct", ch, i))
            i += 1
        else:
            raise CypherSyntaxError(f"unexpected character {ch!r}", i, (), text)
    out.append(Token("eof", "", n))
    return out


@dataclass(frozen=True)
class NodePattern:
    var: str
    label: str | None = None
    props: tuple[tuple[str, str], ...] = ()
    anonymous: bool = False


@dataclass(frozen=True)
class RelPattern:
    kind: str | None
    direction: str  # "out" or "in"


@dataclass(frozen=True)
class Chain:
    nodes: tuple[NodePattern, ...]
    rels: tuple[RelPattern, ...]


@dataclass(frozen=True)
class MatchClause:
    optional: bool
    chains: tuple[Chain, ...]

    def variables(self) -> list[str]:
        return list(dict.fromkeys(n.var for c in self.chains for n in c.nodes))


@dataclass(frozen=True)
class ReturnItem:
    op: str  # "var" | "prop" | "labels"
    var: str
    key: str | None
    column: str


@dataclass(frozen=True)
class Block:
    clauses: tuple[MatchClause, ...]
    distinct: bool
    items: tuple[ReturnItem, ...]

    @property
    def columns(self) -> list[str]:
        return [i.column for i in self.items]

    def variables(self) -> list[str]:
        return list(dict.fromkeys(v for c in self.clauses for v in c.variables()))


@dataclass(frozen=True)
class QueryPlan:
    branches: tuple[Block, ...]
    union_all: bool = False

    @property
    def columns(self) -> list[str]:
        return self.branches[0].columns


class _Parser:
    def __init__(self, text: str) -> None:
        self.text = text
        self.toks = tokenize(text)
        self.i = 0
        self.anon = 0

    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def error(self, message: str, expected: Sequence[str] = ()) -> CypherSyntaxError:
        return CypherSyntaxError(message, self.tok.pos, expected, self.text)

    def is_kw(self, word: str) -> bool:
        return self.tok.kind == "ident" and not self.tok.quoted and self.tok.value.upper() == word

    def kw(self, word: str) -> None:
        if not self.is_kw(word):
            self.unsupported_check()
            raise self.error(f"unexpected {self.tok.value or 'end of input'!r}", (word,))
        self.i += 1

    def punct(self, value: str) -> None:
        if self.tok.kind != "punct" or self.tok.value != value:
            raise self.error(f"unexpected {self.tok.value or 'end of input'!r}", (repr(value),))
        self.i += 1

    def at(self, value: str) -> bool:
        return self.tok.kind == "punct" and self.tok.value == value

    def ident(self, what: str = "identifier") -> str:
        if self.tok.kind != "ident":
            raise self.error(f"unexpected {self.tok.value or 'end of input'!r}", (what,))
        value = self.tok.value
        self.i += 1
        return value

    def unsupported_check(self) -> None:
        if self.tok.kind == "ident" and not self.tok.quoted and self.tok.value.upper() in UNSUPPORTED:
            raise UnsupportedConstruct(self.tok.value.upper())

    # query := block (UNION [ALL] block)*
    def query(self) -> QueryPlan:
        branches = [self.block()]
        alls: list[bool] = []
        while self.is_kw("UNION"):
            self.i += 1
            if self.is_kw("ALL"):
                self.i += 1
                alls.append(True)
            else:
                alls.append(False)
            branches.append(self.block())
        if self.at(";"):
            self.i += 1
        if self.tok.kind != "eof":
            self.unsupported_check()
            raise self.error(f"unexpected {self.tok.value!r}", ("UNION", "end of input"))
        if len(set(alls)) > 1:
            raise UnsupportedConstruct("mixed UNION and UNION ALL")
        cols = branches[0].columns
        for b in branches[1:]:
            if b.columns != cols:
                raise CypherSyntaxError(
                    f"UNION branches return different columns {cols} vs {b.columns}", 0, (), self.text
                )
        return QueryPlan(tuple(branches), union_all=bool(alls and alls[0]))

    def block(self) -> Block:
        clauses: list[MatchClause] = []
        while True:
            self.unsupported_check()
            if self.is_kw("MATCH"):
                self.i += 1
                clauses.append(MatchClause(False, self.chains()))
            elif self.is_kw("OPTIONAL"):
                self.i += 1
                self.kw("MATCH")
                clauses.append(MatchClause(True, self.chains()))
            else:
                break
        if not clauses:
            raise self.error(f"unexpected {self.tok.value or 'end of input'!r}", ("MATCH", "OPTIONAL MATCH"))
        if clauses[0].optional:
            raise UnsupportedConstruct("leading OPTIONAL MATCH")
        self.kw("RETURN")
        distinct = False
        if self.is_kw("DISTINCT"):
            self.i += 1
            distinct = True
        bound = set(v for c in clauses for v in c.variables())
        items = [self.item(bound)]
        while self.at(","):
            self.i += 1
            items.append(self.item(bound))
        cols = [i.column for i in items]
        if len(set(cols)) != len(cols):
            raise CypherSyntaxError(f"duplicate column names {cols}", self.tok.pos, (), self.text)
        return Block(tuple(clauses), distinct, tuple(items))

    def chains(self) -> tuple[Chain, ...]:
        out = [self.chain()]
        while self.at(","):
            self.i += 1
            out.append(self.chain())
        return tuple(out)

    def chain(self) -> Chain:
        nodes = [self.node()]
        rels: list[RelPattern] = []
        while self.at("-") or self.at("<-"):
            rels.append(self.rel())
            nodes.append(self.node())
        return Chain(tuple(nodes), tuple(rels))

    def node(self) -> NodePattern:
        self.punct("(")
        var = None
        if self.tok.kind == "ident":
            var = self.ident()
        label = None
        if self.at(":"):
            self.i += 1
            label = self.ident("label")
            if self.at(":"):
                raise UnsupportedConstruct("multiple labels")
        props: list[tuple[str, str]] = []
        if self.at("{"):
            self.i += 1
            if not self.at("}"):
                props.append(self.prop())
                while self.at(","):
                    self.i += 1
                    props.append(self.prop())
            self.punct("}")
        self.punct(")")
        anonymous = var is None
        if var is None:
            self.anon += 1
            var = f" anon{self.anon}"
        return NodePattern(var, label, tuple(props), anonymous)

    def prop(self) -> tuple[str, str]:
        key = self.ident("property name")
        self.punct(":")
        if self.tok.kind == "number":
            raise UnsupportedConstruct("non-string property literal")
        if self.tok.kind == "ident" and self.tok.value.lower() in ("true", "false", "null"):
            raise UnsupportedConstruct("non-string property literal")
        if self.tok.kind == "punct" and self.tok.value == "$":
            raise UnsupportedConstruct("parameters")
        if self.tok.kind != "string":
            raise self.error(f"unexpected {self.tok.value or 'end of input'!r}", ("string literal",))
        value = self.tok.value
        self.i += 1
        return key, value

    def rel(self) -> RelPattern:
        incoming = self.at("<-")
        self.i += 1
        kind = None
        if self.at("["):
            self.i += 1
            if self.tok.kind == "ident":
                raise UnsupportedConstruct("relationship variable")
            if self.at(":"):
                self.i += 1
                kind = self.ident("relationship type")
            if self.at("|"):
                raise UnsupportedConstruct("relationship type alternatives")
            if self.at("*"):
                raise UnsupportedConstruct("variable-length path")
            if self.at("{"):
                raise UnsupportedConstruct("relationship properties")
            self.punct("]")
            if incoming:
                self.punct("-")
            elif self.at("->"):
                self.i += 1
            elif self.at("-"):
                raise UnsupportedConstruct("undirected relationship")
            else:
                raise self.error(f"unexpected {self.tok.value or 'end of input'!r}", ("'->'",))
        else:
            # bare arrows: --> or <--
            if incoming:
                self.punct("-")
            elif self.at("->"):
                self.i += 1
            elif self.at("-"):
                raise UnsupportedConstruct("undirected relationship")
            else:
                raise self.error(f"unexpected {self.tok.value or 'end of input'!r}", ("'[", "'->'"))
        return RelPattern(kind, "in" if incoming else "out")

    def item(self, bound: set[str]) -> ReturnItem:
        if self.tok.kind != "ident":
            if self.at("*"):
                raise UnsupportedConstruct("RETURN *")
            raise self.error(f"unexpected {self.tok.value or 'end of input'!r}", ("return expression",))
        start = self.tok.pos
        name = self.ident()
        if self.at("("):
            if name.lower() != "labels":
                raise UnsupportedConstruct(f"function {name}")
            self.i += 1
            var = self.ident("variable")
            self.punct(")")
            op, key, default_col = "labels", None, f"labels({var})"
        elif self.at("."):
            self.i += 1
            key = self.ident("property name")
            var, op, default_col = name, "prop", f"{name}.{key}"
        else:
            var, op, key, default_col = name, "var", None, name
        if var not in bound:
            raise CypherSyntaxError(f"variable {var!r} is not bound", start, (), self.text)
        column = default_col
        if self.is_kw("AS"):
            self.i += 1
            column = self.ident("alias")
        return ReturnItem(op, var, key, column)


def parse_cypher(text: str) -> QueryPlan:
    return _Parser(text).query()


@dataclass(frozen=True, order=True)
class NodeRef:
    id: int


Value = Any  # str | NodeRef | tuple[str, ...] | None


@dataclass
class ResultTable:
    columns: list[str]
    rows: list[tuple[Value, ...]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def is_empty(self) -> bool:
        """No rows, or only rows of nulls (an OPTIONAL MATCH that found nothing)."""
        return all(all(v is None for v in row) for row in self.rows)

    def column(self, name: str) -> list[Value]:
        i = self.columns.index(name)
        return [r[i] for r in self.rows]

    def node_ids(self) -> list[int]:
        out: list[int] = []
        for row in self.rows:
            out.extend(v.id for v in row if isinstance(v, NodeRef))
        return list(dict.fromkeys(out))

    def to_dict(self, graph: CodeGraph | None = None) -> dict[str, Any]:
        def render(v: Value) -> Any:
            if isinstance(v, NodeRef):
                if graph is None:
                    return {"id": v.id}
                node = graph.node(v.id)
                out = node.stub()
                out.update({k: val for k, val in sorted(node.props.items()) if k not in out})
                return out
            if isinstance(v, tuple):
                return list(v)
            return v

        return {"columns": list(self.columns), "rows": [[render(v) for v in row] for row in self.rows]}

    def to_json(self, graph: CodeGraph | None = None) -> str:
        return json.dumps(self.to_dict(graph), sort_keys=True, ensure_ascii=False)


Binding = dict[str, "int | None"]


def _node_ok(graph: CodeGraph, nid: int, pat: NodePattern) -> bool:
    node = graph.nodes[nid]
    if pat.label is not None and node.kind != pat.label:
        return False
    return all(node.props.get(k) == v for k, v in pat.props)


def _seeds(graph: CodeGraph, pat: NodePattern) -> list[int]:
    name = dict(pat.props).get("name")
    if name is not None:
        return graph.lookup(pat.label, name)
    if pat.label is not None:
        return graph.nodes_of_kind(pat.label)
    return sorted(graph.nodes)


def _step(graph: CodeGraph, nid: int, rel: RelPattern) -> list[int]:
    kinds = None if rel.kind is None else [rel.kind]
    return sorted({i for i, _ in graph.neighbors(nid, rel.direction, kinds)})


def _match_chain(graph: CodeGraph, chain: Chain, binding: Binding) -> Iterator[Binding]:
    def extend(pos: int, b: Binding, prev: int | None) -> Iterator[Binding]:
        if pos == len(chain.nodes):
            yield b
            return
        pat = chain.nodes[pos]
        if pos == 0:
            pool = None
        else:
            pool = _step(graph, prev, chain.rels[pos - 1])  # type: ignore[arg-type]
        if pat.var in b:
            nid = b[pat.var]
            if nid is None or (pool is not None and nid not in pool) or not _node_ok(graph, nid, pat):
                return
            yield from extend(pos + 1, b, nid)
            return
        candidates = _seeds(graph, pat) if pool is None else pool
        for nid in candidates:
            if _node_ok(graph, nid, pat):
                nb = dict(b)
                nb[pat.var] = nid
                yield from extend(pos + 1, nb, nid)

    yield from extend(0, binding, None)


def _match_clause(graph: CodeGraph, clause: MatchClause, binding: Binding) -> list[Binding]:
    rows = [binding]
    for chain in clause.chains:
        rows = [ext for b in rows for ext in _match_chain(graph, chain, b)]
    return rows


def _project(graph: CodeGraph, item: ReturnItem, binding: Binding) -> Value:
    nid = binding.get(item.var)
    if nid is None:
        return None
    node = graph.nodes[nid]
    if item.op == "var":
        return NodeRef(nid)
    if item.op == "labels":
        return (node.kind,)
    value = node.get(item.key)
    return tuple(value) if isinstance(value, (list, tuple)) else value


def execute_block(graph: CodeGraph, block: Block) -> ResultTable:
    rows: list[Binding] = [{}]
    for clause in block.clauses:
        if not clause.optional:
            rows = [ext for b in rows for ext in _match_clause(graph, clause, b)]
            continue
        fresh = clause.variables()
        nxt: list[Binding] = []
        for b in rows:
            exts = _match_clause(graph, clause, b)
            if exts:
                nxt.extend(exts)
            else:
                nb = dict(b)
                for v in fresh:
                    nb.setdefault(v, None)
                nxt.append(nb)
        rows = nxt
    order = block.variables()
    rows.sort(key=lambda b: tuple(-1 if b.get(v) is None else b[v] for v in order))  # type: ignore[operator]
    out = [tuple(_project(graph, item, b) for item in block.items) for b in rows]
    if block.distinct:
        out = list(dict.fromkeys(out))
    return ResultTable(block.columns, out)


def execute(graph: CodeGraph, plan: QueryPlan) -> ResultTable:
    """Run ``plan``; UNION deduplicates only when every branch is DISTINCT."""
    tables = [execute_block(graph, b) for b in plan.branches]
    rows = [r for t in tables for r in t.rows]
    if len(tables) > 1 and not plan.union_all and all(b.distinct for b in plan.branches):
        rows = list(dict.fromkeys(rows))
    return ResultTable(plan.columns, rows)


def run_entity_query(graph: CodeGraph, text: str) -> ResultTable:
    return execute(graph, parse_cypher(text))
