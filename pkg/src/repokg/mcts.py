"""Monte Carlo tree search over a CodeGraph.

Every iteration selects a tree node by UCT, expands it with the top-k
unvisited graph neighbours by bi-encoder similarity to the query, scores
the new nodes in one batched reranker call (scaled by 10 and clamped to
[0, 10]) and backpropagates each reward to the root.  After the last
iteration visited nodes are ranked by

    s(v) = alpha * R_s / max(1, N_s) + (1 - alpha) * 10 * sim(q, v)

where ``R_s``/``N_s`` count only the rewards a node received as the
evaluated node itself.  ``extraction="prose"`` switches to the
``R / max(1, N)`` and unscaled-similarity variant.
"""

from __future__ import annotations

import logging
import math
import random
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from repokg.encoders import BackendUnavailable, EncoderSuite, Reranker
from repokg.graph import CodeGraph

logger = logging.getLogger(__name__)

REWARD_SCALE = 10.0
DEFAULT_K_MIN = 20
DEFAULT_ALPHA = 0.5
DEFAULT_ITERATIONS = 200
DEFAULT_BUDGET = 10


def default_c(n_modules: int) -> float:
    return 1.0 / (8.0 * math.sqrt(math.log(2 * max(1, n_modules))))


def repoqa_c(n_modules: int) -> float:
    return 1.0 / math.sqrt(math.log(4 * max(1, n_modules)))


@dataclass
class SearchConfig:
    c: float
    k_init: int
    alpha: float = DEFAULT_ALPHA
    k_min: int = DEFAULT_K_MIN
    budget: int = DEFAULT_BUDGET
    iterations: int = DEFAULT_ITERATIONS
    root: int | None = None
    extraction: str = "algorithm"
    max_tree_nodes: int | None = None

    def __post_init__(self) -> None:
        if self.k_min < 1:
            raise ValueError("k_min must be >= 1")
        if self.k_init < self.k_min:
            raise ValueError("k_init must be >= k_min")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.iterations < 1 or self.budget < 1:
            raise ValueError("iterations and budget must be >= 1")
        if self.extraction not in ("algorithm", "prose"):
            raise ValueError(f"unknown extraction variant {self.extraction!r}")

    @classmethod
    def for_graph(cls, graph: CodeGraph, **overrides: Any) -> SearchConfig:
        """Defaults derived from the graph's module count ``N``.

        ``k_min = 20``, ``k_init = N // 2`` (raised to ``k_min`` when
        smaller), ``c = 1 / (8 sqrt(ln 2N))``, ``alpha = 0.5``, 200
        iterations.  Keyword overrides set to None are ignored.
        """
        n = len(graph.nodes_of_kind("Module"))
        overrides = {k: v for k, v in overrides.items() if v is not None}
        k_min = overrides.pop("k_min", DEFAULT_K_MIN)
        k_init = overrides.pop("k_init", max(n // 2, k_min))
        c = overrides.pop("c", default_c(n))
        return cls(c=c, k_init=k_init, k_min=k_min, **overrides)


@dataclass(eq=False)
class TreeNode:
    graph_node: int
    parent: TreeNode | None = None
    children: list[TreeNode] = field(default_factory=list)
    N: int = 0
    R: float = 0.0
    N_s: int = 0
    R_s: float = 0.0
    fully_expanded: bool = False
    exhausted: bool = False
    sim_to_query: float = 0.0

    def path_to_root(self) -> list[TreeNode]:
        out = []
        node: TreeNode | None = self
        while node is not None:
            out.append(node)
            node = node.parent
        return out


@dataclass(frozen=True)
class RankedNode:
    node: int
    score: float
    visits: int
    mean_sim_reward: float
    bi_encoder_sim: float


@dataclass
class SearchResult:
    ranked: list[RankedNode]
    iterations: int = 0
    tree_size: int = 0
    partial: bool = False
    widths: list[int] = field(default_factory=list)
    seconds: float = 0.0

    def node_ids(self) -> list[int]:
        return [r.node for r in self.ranked]

    def to_list(self, graph: CodeGraph) -> list[dict[str, Any]]:
        return [
            {
                "node": graph.node(r.node).stub(),
                "score": r.score,
                "visits": r.visits,
                "mean_sim_reward": r.mean_sim_reward,
                "bi_encoder_sim": r.bi_encoder_sim,
            }
            for r in self.ranked
        ]


def uct_score(node: TreeNode, c: float, parent_visits: int | None = None) -> float:
    n_parent = parent_visits if parent_visits is not None else node.parent.N  # type: ignore[union-attr]
    n = max(1, node.N)
    return node.R / n + c * math.sqrt(2.0 * math.log(max(1, n_parent)) / n)


def retrieval_score(node: TreeNode, alpha: float, extraction: str = "algorithm") -> float:
    if extraction == "prose":
        return alpha * node.R / max(1, node.N) + (1.0 - alpha) * node.sim_to_query
    return alpha * node.R_s / max(1, node.N_s) + (1.0 - alpha) * node.sim_to_query * REWARD_SCALE


def scale_reward(raw: float) -> float:
    return min(REWARD_SCALE, max(0.0, raw * REWARD_SCALE))


class SearchTree:
    """Search tree over graph nodes; each graph node enters at most once."""

    def __init__(self, graph: CodeGraph, root: int, query_vec: np.ndarray) -> None:
        self.graph = graph
        self.query_vec = query_vec
        self.root = TreeNode(root)
        self.index: dict[int, TreeNode] = {root: self.root}
        self._vecs: dict[int, np.ndarray | None] = {}

    def __len__(self) -> int:
        return len(self.index)

    def __contains__(self, graph_node: object) -> bool:
        return graph_node in self.index

    def vector(self, nid: int) -> np.ndarray | None:
        if nid not in self._vecs:
            emb = self.graph.node(nid).embedding
            self._vecs[nid] = None if emb is None else np.asarray(emb)
        return self._vecs[nid]

    def candidates(self, node: TreeNode) -> list[int]:
        return [
            n
            for n in self.graph.neighbor_ids(node.graph_node)
            if n not in self.index and self.vector(n) is not None
        ]

    def has_candidates(self, node: TreeNode) -> bool:
        if node.fully_expanded:
            return False
        if self.candidates(node):
            return True
        node.fully_expanded = True
        return False

    def attach(self, parent: TreeNode, nid: int, sim: float) -> TreeNode:
        child = TreeNode(nid, parent=parent, sim_to_query=sim)
        parent.children.append(child)
        self.index[nid] = child
        return child


def select(tree: SearchTree, c: float) -> TreeNode | None:
    """Pick the node to expand, or None when nothing in the tree can grow.

    Descends by UCT through nodes that have no unvisited neighbours left
    and stops at a leaf or at a node that can still be expanded.  A leaf
    that cannot grow hands over to its nearest expandable ancestor; subtrees
    that can no longer grow are marked exhausted and skipped.
    """
    while not tree.root.exhausted:
        curr = tree.root
        while True:
            if tree.has_candidates(curr):
                return curr
            live = [ch for ch in curr.children if not ch.exhausted]
            if not live:
                break
            # first maximum wins: children are in descending-similarity order
            curr = max(live, key=lambda ch: uct_score(ch, c, curr.N))
        # dead end: walk up for an ancestor that can still expand
        node: TreeNode | None = curr
        while node is not None:
            if tree.has_candidates(node):
                return node
            if all(ch.exhausted for ch in node.children):
                node.exhausted = True
            node = node.parent
    return None


def expand(tree: SearchTree, node: TreeNode, k: int, limit: int | None = None) -> list[TreeNode]:
    """Attach the top-``k`` unvisited neighbours of ``node`` by similarity."""
    cands = tree.candidates(node)
    if not cands:
        node.fully_expanded = True
        return []
    mat = np.stack([tree.vector(n) for n in cands])  # type: ignore[misc]
    sims = mat @ tree.query_vec
    order = sorted(range(len(cands)), key=lambda i: (-sims[i], cands[i]))
    take = k if limit is None else max(0, min(k, limit))
    added = [tree.attach(node, cands[i], float(sims[i])) for i in order[:take]]
    if len(added) == len(cands):
        node.fully_expanded = True
    return added


def next_width(k: int, k_min: int) -> int:
    return max(k_min, k // 2)


def simulate_batch(reranker: Reranker, query: str, graph: CodeGraph, nodes: Sequence[TreeNode]) -> list[float]:
    """One batched reranker call; raw scores are scaled by 10 and clamped."""
    if not nodes:
        return []
    docs = [graph.node(n.graph_node).description_text for n in nodes]
    raw = reranker.rerank(query, docs)
    return [scale_reward(float(s)) for s in raw]


def backpropagate(node: TreeNode, reward: float) -> None:
    node.N_s += 1
    node.R_s += reward
    for v in node.path_to_root():
        v.N += 1
        v.R += reward


def extract(tree: SearchTree, config: SearchConfig) -> list[RankedNode]:
    scored = []
    for nid, tn in tree.index.items():
        if tn is tree.root or tn.N <= 0:
            continue
        s = retrieval_score(tn, config.alpha, config.extraction)
        scored.append((-s, nid, tn))
    scored.sort(key=lambda t: (t[0], t[1]))
    return [
        RankedNode(nid, -neg, tn.N, tn.R_s / max(1, tn.N_s), tn.sim_to_query)
        for neg, nid, tn in scored[: config.budget]
    ]


def _root_of(graph: CodeGraph, config: SearchConfig) -> int:
    if config.root is not None:
        graph.node(config.root)
        return config.root
    repos = graph.nodes_of_kind("Repo")
    if not repos:
        raise ValueError("graph has no Repo node and no root was configured")
    return repos[0]


def _query_vector(encoders: EncoderSuite, query: str) -> np.ndarray:
    vec = np.asarray(encoders.embedder.embed([query])[0], dtype=float)
    norm = np.linalg.norm(vec)
    return vec / norm if norm else vec


def run_search(
    graph: CodeGraph,
    query: str,
    encoders: EncoderSuite,
    config: SearchConfig,
    checkpoints: Sequence[int] = (),
    on_checkpoint: Callable[[int, SearchResult], None] | None = None,
) -> tuple[SearchResult, SearchTree]:
    start = time.perf_counter()
    tree = SearchTree(graph, _root_of(graph, config), _query_vector(encoders, query))
    k = config.k_init
    widths: list[int] = []
    marks = set(checkpoints)
    partial = False
    done = 0
    for t in range(1, config.iterations + 1):
        node = select(tree, config.c)
        if node is None:
            break
        room = None if config.max_tree_nodes is None else config.max_tree_nodes - len(tree)
        if room is not None and room <= 0:
            break
        new = expand(tree, node, k, room)
        if new:
            widths.append(k)
            k = next_width(k, config.k_min)
            try:
                rewards = simulate_batch(encoders.reranker, query, graph, new)
            except BackendUnavailable as exc:
                logger.warning("reranker unavailable, returning partial results: %s", exc)
                partial = True
                # unscored nodes must not be ranked
                for tn in new:
                    node.children.remove(tn)
                    del tree.index[tn.graph_node]
                break
            for tn, r in zip(new, rewards):
                backpropagate(tn, r)
        done = t
        if t in marks and on_checkpoint is not None:
            on_checkpoint(t, _result(tree, config, t, widths, partial, start))
    result = _result(tree, config, done, widths, partial, start)
    if on_checkpoint is not None:
        # iterations cut short: later checkpoints see the final tree
        for t in sorted(marks):
            if t > done:
                on_checkpoint(t, result)
    return result, tree


def _result(tree: SearchTree, config: SearchConfig, t: int, widths: list[int], partial: bool, start: float) -> SearchResult:
    return SearchResult(
        ranked=extract(tree, config),
        iterations=t,
        tree_size=len(tree),
        partial=partial,
        widths=list(widths),
        seconds=time.perf_counter() - start,
    )


def search(graph: CodeGraph, query: str, encoders: EncoderSuite, config: SearchConfig) -> SearchResult:
    return run_search(graph, query, encoders, config)[0]


def search_sweep(
    graph: CodeGraph,
    query: str,
    encoders: EncoderSuite,
    config: SearchConfig,
    iterations: Sequence[int],
) -> dict[int, SearchResult]:
    """Results after each iteration count in ``iterations`` from a single run.

    The search is deterministic, so the tree after ``t`` iterations of a
    long run is the tree a run with ``iterations=t`` would build.
    """
    out: dict[int, SearchResult] = {}
    cfg = SearchConfig(**{**config.__dict__, "iterations": max(iterations)})
    run_search(graph, query, encoders, cfg, iterations, lambda t, r: out.__setitem__(t, r))
    return {t: out[t] for t in iterations}


def random_search(
    graph: CodeGraph,
    query: str,
    encoders: EncoderSuite,
    config: SearchConfig,
    seed: int = 0,
) -> SearchResult:
    """Baseline with the same budget: random expandable node, random neighbours."""
    rng = random.Random(seed)
    start = time.perf_counter()
    tree = SearchTree(graph, _root_of(graph, config), _query_vector(encoders, query))
    k = config.k_init
    widths: list[int] = []
    done = 0
    for t in range(1, config.iterations + 1):
        open_nodes = [tn for tn in tree.index.values() if tree.has_candidates(tn)]
        if not open_nodes:
            break
        room = None if config.max_tree_nodes is None else config.max_tree_nodes - len(tree)
        if room is not None and room <= 0:
            break
        node = rng.choice(open_nodes)
        cands = tree.candidates(node)
        rng.shuffle(cands)
        take = k if room is None else min(k, room)
        new = []
        for nid in cands[:take]:
            sim = float(np.dot(tree.vector(nid), tree.query_vec))  # type: ignore[arg-type]
            new.append(tree.attach(node, nid, sim))
        widths.append(k)
        k = next_width(k, config.k_min)
        for tn, r in zip(new, simulate_batch(encoders.reranker, query, graph, new)):
            backpropagate(tn, r)
        done = t
    return _result(tree, config, done, widths, False, start)
