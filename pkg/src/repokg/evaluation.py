"""Ranking metrics and benchmark runs over qrels files."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

logger = logging.getLogger(__name__)

METRICS = ("ndcg", "recall", "mrr", "accuracy")
DEFAULT_KS = (1, 5, 10)


class NoRelevantItems(ValueError):
    pass


def _relevant(relevances: Mapping[str, float]) -> dict[str, float]:
    rel = {item: r for item, r in relevances.items() if r > 0}
    if not rel:
        raise NoRelevantItems("query has no relevant items")
    return rel


def _check_k(k: int) -> None:
    if k < 1:
        raise ValueError("k must be >= 1")


def ndcg_at_k(ranking: Sequence[str], relevances: Mapping[str, float], k: int) -> float:
    """Gain ``rel``, discount ``1/log2(rank + 1)``, ideal DCG over all relevant items."""
    _check_k(k)
    rel = _relevant(relevances)
    dcg = sum(rel.get(item, 0.0) / math.log2(rank + 1) for rank, item in enumerate(ranking[:k], start=1))
    ideal = sorted(rel.values(), reverse=True)[:k]
    idcg = sum(r / math.log2(rank + 1) for rank, r in enumerate(ideal, start=1))
    return dcg / idcg


def recall_at_k(ranking: Sequence[str], relevances: Mapping[str, float], k: int) -> float:
    _check_k(k)
    rel = _relevant(relevances)
    return len(set(ranking[:k]) & rel.keys()) / len(rel)


def mrr_at_k(ranking: Sequence[str], relevances: Mapping[str, float], k: int) -> float:
    _check_k(k)
    rel = _relevant(relevances)
    for rank, item in enumerate(ranking[:k], start=1):
        if item in rel:
            return 1.0 / rank
    return 0.0


def accuracy_at_k(ranking: Sequence[str], relevances: Mapping[str, float], k: int) -> float:
    _check_k(k)
    rel = _relevant(relevances)
    return 1.0 if any(item in rel for item in ranking[:k]) else 0.0


METRIC_FUNCS: dict[str, Callable[[Sequence[str], Mapping[str, float], int], float]] = {
    "ndcg": ndcg_at_k,
    "recall": recall_at_k,
    "mrr": mrr_at_k,
    "accuracy": accuracy_at_k,
}


@dataclass
class QrelsQuery:
    qid: str
    query: str
    relevant: dict[str, int]

    @property
    def scorable(self) -> bool:
        return any(r > 0 for r in self.relevant.values())


@dataclass
class Qrels:
    queries: list[QrelsQuery] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.queries)

    @classmethod
    def loads(cls, text: str) -> Qrels:
        queries = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            rec = json.loads(line)
            relevant: dict[str, int] = {}
            for item in rec.get("relevant", []):
                if item["id"] in relevant:
                    raise ValueError(f"line {lineno}: duplicate item {item['id']!r}")
                rel = int(item.get("rel", 1))
                if rel < 0:
                    raise ValueError(f"line {lineno}: negative relevance")
                relevant[item["id"]] = rel
            queries.append(QrelsQuery(str(rec["qid"]), rec["query"], relevant))
        return cls(queries)

    @classmethod
    def load(cls, path: str | Path) -> Qrels:
        return cls.loads(Path(path).read_text(encoding="utf-8"))

    def dumps(self) -> str:
        lines = [
            json.dumps(
                {"qid": q.qid, "query": q.query, "relevant": [{"id": i, "rel": r} for i, r in q.relevant.items()]},
                sort_keys=True,
            )
            for q in self.queries
        ]
        return "".join(line + "\n" for line in lines)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")


@dataclass
class RunRecord:
    qid: str
    ranking: list[tuple[str, float]]
    failed: bool = False
    error: str | None = None
    seconds: float = 0.0

    def __post_init__(self) -> None:
        ids = [i for i, _ in self.ranking]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate items in ranking for {self.qid}")

    @property
    def items(self) -> list[str]:
        return [i for i, _ in self.ranking]


def score_run(
    qrels: Qrels,
    runs: Mapping[str, RunRecord],
    ks: Sequence[int] = DEFAULT_KS,
) -> tuple[dict[str, float], dict[str, dict[str, float]], list[str]]:
    """Macro-averaged metrics, per-query metrics and the excluded query ids."""
    per_query: dict[str, dict[str, float]] = {}
    excluded: list[str] = []
    for q in qrels.queries:
        if not q.scorable:
            excluded.append(q.qid)
            continue
        run = runs.get(q.qid)
        ranking = run.items if run is not None and not run.failed else []
        per_query[q.qid] = {
            f"{m}@{k}": METRIC_FUNCS[m](ranking, q.relevant, k) for m in METRICS for k in ks
        }
    aggregate: dict[str, float] = {}
    if per_query:
        for key in next(iter(per_query.values())):
            aggregate[key] = macro_average(v[key] for v in per_query.values())
    return aggregate, per_query, excluded


Retriever = Callable[[str], list[tuple[str, float]]]


def _retrievers(graph: Any, mode: str, config: Any, encoders: Any, translator: Any) -> Retriever:
    from repokg import mcts, router

    if mode == "mcts":
        def run(query: str) -> list[tuple[str, float]]:
            res = mcts.search(graph, query, encoders, config)
            return [(graph.node(r.node).item_id, r.score) for r in res.ranked]
    elif mode == "entity":
        def run(query: str) -> list[tuple[str, float]]:
            table = router.entity_lookup(graph, query, translator)
            return _table_items(graph, table)
    elif mode == "router":
        def run(query: str) -> list[tuple[str, float]]:
            resp = router.route(graph, query, translator, encoders, config)
            if resp.path == "entity":
                return _table_items(graph, resp.entity_rows)
            return [(graph.node(r.node).item_id, r.score) for r in resp.ranked_nodes.ranked]
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return run


def _table_items(graph: Any, table: Any) -> list[tuple[str, float]]:
    if table is None:
        return []
    out: list[tuple[str, float]] = []
    seen: set[str] = set()
    for nid in table.node_ids():
        item = graph.node(nid).item_id
        if item not in seen:
            seen.add(item)
            out.append((item, 1.0 / (len(out) + 1)))
    return out


def run_benchmark(
    graph: Any,
    qrels: Qrels,
    mode: str = "mcts",
    config: Any = None,
    encoders: Any = None,
    translator: Any = None,
    sweep: Sequence[int] | None = None,
    ks: Sequence[int] = DEFAULT_KS,
    out: str | Path | None = None,
) -> dict[str, Any]:
    """Evaluate every query and return (and optionally write) a JSON report.

    A query whose retrieval raises is scored 0 and flagged.  With ``sweep``
    (mcts mode only) each query is searched once up to ``max(sweep)``
    iterations and scored at every checkpoint.
    """
    from repokg import mcts
    from repokg.encoders import EncoderSuite

    if mode not in ("mcts", "entity", "router"):
        raise ValueError(f"unknown mode {mode!r}")
    if sweep and mode != "mcts":
        raise ValueError("iteration sweeps need mode 'mcts'")
    encoders = encoders or EncoderSuite.local()
    if mode != "entity" and config is None:
        config = mcts.SearchConfig.for_graph(graph)
    if translator is None and mode != "mcts":
        from repokg.router import RuleBasedTranslator

        translator = RuleBasedTranslator()

    report: dict[str, Any] = {"mode": mode, "n_queries": len(qrels), "ks": list(ks)}
    if sweep:
        points = sorted(set(sweep))
        runs_at: dict[int, dict[str, RunRecord]] = {t: {} for t in points}
        for q in qrels.queries:
            start = time.perf_counter()
            try:
                results = mcts.search_sweep(graph, q.query, encoders, config, points)
            except Exception as exc:  # scored as a miss, reported per query
                logger.warning("query %s failed: %s", q.qid, exc)
                for t in points:
                    runs_at[t][q.qid] = RunRecord(q.qid, [], failed=True, error=str(exc))
                continue
            elapsed = time.perf_counter() - start
            for t in points:
                ranking = [(graph.node(r.node).item_id, r.score) for r in results[t].ranked]
                runs_at[t][q.qid] = RunRecord(q.qid, ranking, seconds=elapsed)
        curves: dict[str, list[float]] = {}
        for t in points:
            agg, _, _ = score_run(qrels, runs_at[t], ks)
            for key, value in agg.items():
                curves.setdefault(key, []).append(value)
        done = [r.seconds / points[-1] for r in runs_at[points[-1]].values() if not r.failed]
        report["sweep"] = {
            "iterations": points,
            "curves": curves,
            "mean_iteration_seconds": macro_average(done) if done else None,
        }
        runs = runs_at[points[-1]]
    else:
        retrieve = _retrievers(graph, mode, config, encoders, translator)
        runs = {}
        for q in qrels.queries:
            start = time.perf_counter()
            try:
                ranking = retrieve(q.query)
                runs[q.qid] = RunRecord(q.qid, ranking, seconds=time.perf_counter() - start)
            except Exception as exc:  # scored as a miss, reported per query
                logger.warning("query %s failed: %s", q.qid, exc)
                runs[q.qid] = RunRecord(q.qid, [], failed=True, error=str(exc))

    aggregate, per_query, excluded = score_run(qrels, runs, ks)
    report["aggregate"] = aggregate
    report["excluded"] = excluded
    report["per_query"] = [
        {
            "qid": q.qid,
            "ranking": [{"id": i, "score": s} for i, s in runs[q.qid].ranking] if q.qid in runs else [],
            "metrics": per_query.get(q.qid),
            "failed": runs[q.qid].failed if q.qid in runs else False,
            "error": runs[q.qid].error if q.qid in runs else None,
        }
        for q in qrels.queries
    ]
    if out is not None:
        write_report(report, out)
    return report


def write_report(report: Mapping[str, Any], path: str | Path) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_sweep_csv(report: Mapping[str, Any], path: str | Path) -> None:
    sweep = report.get("sweep")
    if not sweep:
        raise ValueError("report has no sweep block")
    keys = sorted(sweep["curves"])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iterations", *keys])
        for i, t in enumerate(sweep["iterations"]):
            writer.writerow([t, *(repr(sweep["curves"][k][i]) for k in keys)])


def macro_average(values: Iterable[float]) -> float:
    vals = list(values)
    return math.fsum(vals) / len(vals) if vals else 0.0
