"""Test assets: the two-file calculator repository and synthetic graphs."""

from __future__ import annotations

import random
import shutil
import string
from importlib import resources
from pathlib import Path

from repokg.encoders import Embedder, LocalEmbedder
from repokg.evaluation import Qrels, QrelsQuery
from repokg.graph import CodeGraph, edge_is_legal

TWO_FILE_NAMES = ("base.py", "extended.py")

TOPICS = (
    ("parse", "token", "grammar", "syntax", "lexer", "tree"),
    ("render", "pixel", "canvas", "color", "shade", "frame"),
    ("socket", "packet", "network", "route", "latency", "buffer"),
    ("matrix", "vector", "scalar", "tensor", "linear", "solve"),
    ("cache", "evict", "memory", "store", "expire", "lookup"),
    ("thread", "lock", "mutex", "queue", "worker", "schedule"),
    ("image", "resize", "crop", "filter", "blur", "sharpen"),
    ("account", "ledger", "balance", "credit", "debit", "invoice"),
    ("sensor", "signal", "sample", "noise", "calibrate", "measure"),
    ("user", "login", "session", "password", "profile", "permission"),
    ("config", "option", "setting", "default", "override", "load"),
    ("audio", "volume", "channel", "stream", "decode", "codec"),
)
_ENTITY_KINDS = ("Class", "Function", "GlobalVariable", "Method", "Field")


def two_file_fixture(dest: str | Path | None = None) -> Path:
    """Directory holding base.py and extended.py.

    With ``dest`` the files are copied there; otherwise the packaged copy
    is returned directly.
    """
    src = resources.files("repokg.assets") / "two_file"
    if dest is None:
        return Path(str(src))
    out = Path(dest)
    out.mkdir(parents=True, exist_ok=True)
    for name in TWO_FILE_NAMES:
        with resources.as_file(src / name) as p:
            shutil.copyfile(p, out / name)
    return out


def _nonce(rng: random.Random, used: set[str]) -> str:
    while True:
        word = "zq" + "".join(rng.choice(string.ascii_lowercase) for _ in range(5))
        if word not in used:
            used.add(word)
            return word


def random_graph(
    seed: int,
    n_nodes: int,
    edge_density: float = 0.1,
    embedder: Embedder | None = None,
) -> CodeGraph:
    """Schema-legal annotated graph with ``n_nodes`` entity nodes plus a Repo.

    Modules get a topic; every entity inside a module is described with
    words from that topic plus a unique nonce (the last token of its
    description).  Extra USES/INHERITS edges favour the same module.  All
    entity nodes are embedded with ``embedder`` (the local hashed embedder
    by default); the Repo is not.
    """
    rng = random.Random(seed)
    g = CodeGraph()
    repo = g.add_node("Repo", {"name": f"synthetic{seed}"})
    used: set[str] = set()
    if n_nodes <= 0:
        return g.freeze()
    n_modules = max(1, min(n_nodes, n_nodes // 8))
    members: dict[int, list[int]] = {}
    classes: dict[int, list[int]] = {}
    module_of: dict[int, int] = {}
    topic_of: dict[int, tuple[str, ...]] = {}

    def describe(nid: int, topic: tuple[str, ...]) -> None:
        words = rng.sample(topic, 3)
        node = g.node(nid)
        g.set_property(nid, "description", f"{node.kind.lower()} {node.name} {' '.join(words)} {_nonce(rng, used)}")
        g.set_property(nid, "member_descriptions", "---None---")

    for m in range(n_modules):
        topic = TOPICS[rng.randrange(len(TOPICS))]
        name = f"pkg.mod{m}"
        mid = g.add_node("Module", {"name": name, "local_name": f"mod{m}", "code": ""})
        g.add_edge(repo, mid, "CONTAINS")
        members[mid], classes[mid] = [], []
        module_of[mid] = mid
        topic_of[mid] = topic
        describe(mid, topic)
    modules = list(members)

    for i in range(n_nodes - n_modules):
        mid = rng.choice(modules)
        kind = rng.choice(_ENTITY_KINDS)
        if kind in ("Method", "Field") and not classes[mid]:
            kind = "Class"
        name = f"{kind.lower()}{i}"
        if kind in ("Method", "Field"):
            owner = rng.choice(classes[mid])
            props = {"name": name, "class": g.node(owner).name, "code": "", "module_name": g.node(mid).name}
            nid = g.add_node(kind, props)
            g.add_edge(owner, nid, "HAS_METHOD" if kind == "Method" else "HAS_FIELD")
        else:
            nid = g.add_node(kind, {"name": name, "code": "", "module_name": g.node(mid).name})
            g.add_edge(mid, nid, "CONTAINS")
            if kind == "Class":
                classes[mid].append(nid)
        members[mid].append(nid)
        module_of[nid] = mid
        describe(nid, topic_of[mid])

    entities = [n for ns in members.values() for n in ns]
    for _ in range(round(edge_density * n_nodes)):
        if not entities:
            break
        src = rng.choice(entities)
        pool = members[module_of[src]] if rng.random() < 0.7 else entities
        dst = rng.choice(pool)
        kind = "INHERITS" if g.node(src).kind == "Class" and g.node(dst).kind == "Class" and rng.random() < 0.3 else "USES"
        if src != dst and edge_is_legal(g.node(src).kind, kind, g.node(dst).kind):
            g.add_edge(src, dst, kind)

    embedder = embedder or LocalEmbedder()
    ids = [n for n in sorted(g.nodes) if n != repo]
    for nid, vec in zip(ids, embedder.embed([g.node(n).description_text for n in ids])):
        g.set_embedding(nid, vec)
    return g.freeze()


def nonce_of(graph: CodeGraph, nid: int) -> str:
    return graph.node(nid).props["description"].rsplit(" ", 1)[-1]


def planted_qrels(graph: CodeGraph, n_queries: int, seed: int) -> Qrels:
    """One query per sampled node: two of its topic words plus its nonce.

    The nonce occurs in exactly one description, so the sampled node is the
    query's single relevant item.
    """
    rng = random.Random(seed)
    pool = [n for n in sorted(graph.nodes) if graph.node(n).props.get("description")]
    picks = rng.sample(pool, min(n_queries, len(pool)))
    queries = []
    for i, nid in enumerate(picks):
        words = graph.node(nid).props["description"].split()[2:-1]
        text = f"{' '.join(rng.sample(words, 2))} {nonce_of(graph, nid)}"
        queries.append(QrelsQuery(f"q{i}", text, {graph.node(nid).item_id: 1}))
    return Qrels(queries)
