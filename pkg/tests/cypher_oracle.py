"""Random queries from the supported grammar and an exhaustive matcher for them.

The generator returns both the query text and a structured description;
the matcher works from the structure only, so it shares no code with the
parser or the executor.
"""

from __future__ import annotations

import itertools
import random
from collections import Counter
from dataclasses import dataclass, field

from repokg.cypher import NodeRef
from repokg.graph import EDGE_KINDS, NODE_KINDS, CodeGraph

LABELS = [k for k in NODE_KINDS if k != "Import"] + ["Widget"]
RELS = list(EDGE_KINDS) + ["CALLS"]


@dataclass
class NodeSpec:
    var: str
    label: str | None = None
    name: str | None = None


@dataclass
class Hop:
    kind: str
    forward: bool
    node: NodeSpec


@dataclass
class ChainSpec:
    start: NodeSpec
    hops: list[Hop] = field(default_factory=list)

    def nodes(self) -> list[NodeSpec]:
        return [self.start] + [h.node for h in self.hops]


@dataclass
class BranchSpec:
    match: list[ChainSpec]
    optional: list[ChainSpec]
    items: list[tuple[str, str, str | None]]  # (op, var, key) with op in var/prop/labels
    distinct: bool


@dataclass
class QuerySpec:
    branches: list[BranchSpec]
    union_all: bool
    text: str


def _node_text(n: NodeSpec, show_var: bool) -> str:
    inner = n.var if show_var else ""
    if n.label:
        inner += f":{n.label}"
    if n.name is not None:
        inner += " {name: '" + n.name + "'}"
    return f"({inner})"


def _chain_text(c: ChainSpec, shown: set[str]) -> str:
    out = _node_text(c.start, c.start.var in shown)
    for h in c.hops:
        rel = f"-[:{h.kind}]->" if h.forward else f"<-[:{h.kind}]-"
        out += rel + _node_text(h.node, h.node.var in shown)
    return out


def random_query(rng: random.Random, graph: CodeGraph) -> QuerySpec:
    names = sorted({n.props["name"] for n in graph.nodes.values()}) or ["nothing"]
    n_branches = rng.choice([1, 1, 1, 2, 3])
    n_items = rng.randint(1, 3)
    union_all = rng.random() < 0.3
    branches = []
    counter = itertools.count()

    def node(var: str) -> NodeSpec:
        label = rng.choice(LABELS) if rng.random() < 0.6 else None
        name = None
        if rng.random() < 0.25:
            name = rng.choice(names) if rng.random() < 0.8 else "absent_name"
        return NodeSpec(var, label, name)

    def hop(var: str) -> Hop:
        return Hop(rng.choice(RELS) if rng.random() < 0.9 else rng.choice(EDGE_KINDS), rng.random() < 0.7, node(var))

    for _ in range(n_branches):
        vars_: list[str] = []

        def fresh() -> str:
            v = f"v{next(counter)}"
            vars_.append(v)
            return v

        second = rng.random() < 0.2
        # at most three variables per clause keeps enumeration cheap
        main = [ChainSpec(node(fresh()), [hop(fresh()) for _ in range(rng.randint(0, 1 if second else 2))])]
        if second:
            # second comma-separated chain sharing a variable
            shared = rng.choice(vars_)
            main.append(ChainSpec(NodeSpec(shared), [hop(fresh())]))
        bound = list(vars_)
        optional = []
        for _ in range(rng.choice([0, 0, 1, 2])):
            optional.append(ChainSpec(NodeSpec(rng.choice(vars_)), [hop(fresh()) for _ in range(rng.randint(1, 2))]))
        items = []
        for _ in range(n_items):
            var = rng.choice(vars_ if rng.random() < 0.7 else bound)
            op = rng.choice(["var", "prop", "prop", "labels"])
            key = rng.choice(["name", "name", "signature", "module_name"]) if op == "prop" else None
            items.append((op, var, key))
        branches.append(BranchSpec(main, optional, items, rng.random() < 0.5))

    # hide variables that are never referenced elsewhere, as anonymous nodes
    parts = []
    for b in branches:
        refs = Counter(v for c in b.match + b.optional for n in c.nodes() for v in [n.var])
        used = {v for _, v, _ in b.items} | {v for v, k in refs.items() if k > 1}
        text = "MATCH " + ", ".join(_chain_text(c, used) for c in b.match)
        for c in b.optional:
            text += " OPTIONAL MATCH " + _chain_text(c, used)
        cols = []
        for i, (op, var, key) in enumerate(b.items):
            expr = {"var": var, "prop": f"{var}.{key}", "labels": f"labels({var})"}[op]
            cols.append(f"{expr} AS col{i}")
        text += " RETURN " + ("DISTINCT " if b.distinct else "") + ", ".join(cols)
        parts.append(text)
    glue = " UNION ALL " if union_all else " UNION "
    return QuerySpec(branches, union_all, glue.join(parts))


def _node_fits(graph: CodeGraph, nid: int, spec: NodeSpec) -> bool:
    node = graph.nodes[nid]
    if spec.label is not None and node.kind != spec.label:
        return False
    return spec.name is None or node.props.get("name") == spec.name


def _edges(graph: CodeGraph) -> set[tuple[int, int, str]]:
    return set(graph.edges())


def _fits(graph: CodeGraph, edges: set, chains: list[ChainSpec], b: dict[str, int]) -> bool:
    for c in chains:
        for n in c.nodes():
            if not _node_fits(graph, b[n.var], n):
                return False
        prev = c.start.var
        for h in c.hops:
            src, dst = (b[prev], b[h.node.var]) if h.forward else (b[h.node.var], b[prev])
            if (src, dst, h.kind) not in edges:
                return False
            prev = h.node.var
    return True


def _enumerate(graph: CodeGraph, edges: set, chains: list[ChainSpec], base: dict[str, int]) -> list[dict[str, int]]:
    new_vars = sorted({n.var for c in chains for n in c.nodes()} - set(base))
    ids = sorted(graph.nodes)
    out = []
    for combo in itertools.product(ids, repeat=len(new_vars)):
        b = dict(base, **dict(zip(new_vars, combo)))
        if _fits(graph, edges, chains, b):
            out.append(b)
    return out


def _value(graph: CodeGraph, op: str, var: str, key: str | None, b: dict) -> object:
    nid = b.get(var)
    if nid is None:
        return None
    if op == "var":
        return NodeRef(nid)
    if op == "labels":
        return (graph.nodes[nid].kind,)
    return graph.nodes[nid].props.get(key)


def brute_force(graph: CodeGraph, spec: QuerySpec) -> Counter:
    edges = _edges(graph)
    tables = []
    for br in spec.branches:
        bindings = _enumerate(graph, edges, br.match, {})
        for opt in br.optional:
            grown = []
            opt_vars = sorted({n.var for n in opt.nodes()})
            for b in bindings:
                if any(v in b and b[v] is None for v in opt_vars):
                    # a null start cannot be extended
                    ext = []
                else:
                    ext = _enumerate(graph, edges, [opt], {k: v for k, v in b.items() if v is not None})
                    ext = [dict(b, **{k: v for k, v in e.items()}) for e in ext]
                if ext:
                    grown.extend(ext)
                else:
                    grown.append(dict(b, **{v: None for v in opt_vars if v not in b}))
            bindings = grown
        rows = [tuple(_value(graph, op, var, key, b) for op, var, key in br.items) for b in bindings]
        if br.distinct:
            rows = list(dict.fromkeys(rows))
        tables.append(rows)
    rows = [r for t in tables for r in t]
    if len(tables) > 1 and not spec.union_all and all(b.distinct for b in spec.branches):
        rows = list(dict.fromkeys(rows))
    return Counter(rows)
