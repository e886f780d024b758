"""Command-line front end: index, annotate, query, search, route, eval."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

from repokg import annotate, builder, cypher, evaluation, mcts, router
from repokg.encoders import EncoderError, EncoderSuite, make_describer, make_embedder, make_reranker
from repokg.graph import CodeGraph, GraphError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_BACKEND = 2

logger = logging.getLogger("repokg")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Argument errors print the subcommand help and exit 1."""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_help(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _emit(data: Any) -> None:
    sys.stdout.write(json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n")


def _load_graph(path: str) -> CodeGraph:
    try:
        return CodeGraph.load(path)
    except OSError as exc:
        raise UsageError(f"cannot read graph {path}: {exc}") from exc


def _searchable(graph: CodeGraph, encoders: EncoderSuite) -> CodeGraph:
    """Annotate in memory with the local describer when no node is embedded yet."""
    if any(n.embedding is not None for n in graph.nodes.values()):
        return graph
    logger.warning("graph has no embeddings; annotating in memory with the local describer")
    annotate.annotate_and_embed(graph, make_describer("local"), encoders.embedder)
    return graph


def _search_config(graph: CodeGraph, args: argparse.Namespace) -> mcts.SearchConfig:
    try:
        return mcts.SearchConfig.for_graph(
            graph,
            iterations=args.iterations,
            alpha=args.alpha,
            c=args.c,
            k_init=args.k_init,
            k_min=args.k_min,
            budget=args.budget,
            extraction=args.extraction,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _encoders(args: argparse.Namespace) -> EncoderSuite:
    return EncoderSuite(make_embedder(args.embedder), make_reranker(args.reranker))


def cmd_index(args: argparse.Namespace) -> int:
    root = Path(args.root)
    if not root.is_dir():
        raise UsageError(f"{root} is not a directory")
    result = builder.build_with_report(root, args.repo_name, args.include or ("*.py",), args.exclude or ())
    out = Path(args.out)
    result.graph.save(str(out))
    report = out.with_name(out.stem + ".resolution.json")
    report.write_text(json.dumps(result.report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    for line in result.diagnostics:
        logger.warning("%s", line)
    _emit({"graph": str(out), "nodes": len(result.graph), "edges": result.graph.edge_count(), "resolution_report": str(report)})
    return EXIT_OK


def cmd_annotate(args: argparse.Namespace) -> int:
    graph = _load_graph(args.graph)
    report = annotate.annotate_and_embed(graph, make_describer(args.describer), make_embedder(args.embedder), args.size_limit)
    graph.save(args.out or args.graph)
    _emit(
        {
            "annotated": report.annotated,
            "skipped": report.skipped,
            "embedded": report.embedded,
            "unembedded": report.unembedded,
        }
    )
    return EXIT_OK


def cmd_query(args: argparse.Namespace) -> int:
    graph = _load_graph(args.graph)
    text = args.cypher if args.cypher is not None else Path(args.file).read_text(encoding="utf-8")
    try:
        table = cypher.run_entity_query(graph, text)
    except cypher.CypherError as exc:
        raise UsageError(f"{type(exc).__name__}: {exc}") from exc
    _emit(table.to_dict(graph))
    return EXIT_OK


def cmd_search(args: argparse.Namespace) -> int:
    encoders = _encoders(args)
    graph = _searchable(_load_graph(args.graph), encoders)
    config = _search_config(graph, args)
    result = mcts.search(graph, args.query, encoders, config)
    if result.partial:
        logger.warning("search returned partial results")
    _emit(result.to_list(graph))
    return EXIT_BACKEND if result.partial else EXIT_OK


def cmd_route(args: argparse.Namespace) -> int:
    encoders = _encoders(args)
    graph = _searchable(_load_graph(args.graph), encoders)
    config = _search_config(graph, args)
    resp = router.route(graph, args.query, router.make_translator(args.translator), encoders, config)
    _emit(resp.to_dict(graph, timings=False))
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    encoders = _encoders(args)
    graph = _load_graph(args.graph)
    if args.mode != "entity":
        graph = _searchable(graph, encoders)
    try:
        qrels = evaluation.Qrels.load(args.qrels)
    except OSError as exc:
        raise UsageError(f"cannot read qrels {args.qrels}: {exc}") from exc
    sweep = None
    if args.sweep:
        try:
            sweep = [int(t) for t in args.sweep.split(",") if t.strip()]
        except ValueError as exc:
            raise UsageError(f"bad --sweep value {args.sweep!r}") from exc
    config = _search_config(graph, args)
    try:
        report = evaluation.run_benchmark(
            graph,
            qrels,
            mode=args.mode,
            config=config,
            encoders=encoders,
            translator=router.make_translator(args.translator),
            sweep=sweep,
            out=args.out,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if args.csv:
        evaluation.write_sweep_csv(report, args.csv)
    _emit(report["aggregate"])
    return EXIT_OK


def _search_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--iterations", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--c", type=float)
    p.add_argument("--k-init", type=int)
    p.add_argument("--k-min", type=int)
    p.add_argument("--budget", type=int)
    p.add_argument("--extraction", choices=("algorithm", "prose"))
    p.add_argument("--reranker", default=None, help="'local' or a base URL")
    p.add_argument("--embedder", default=None, help="'local' or a base URL")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="repokg", description="Code knowledge graph indexing and retrieval.")
    parser.add_argument("--log-level", default="WARNING", choices=("DEBUG", "INFO", "WARNING", "ERROR"))
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("index", help="parse a repository into a graph file")
    p.add_argument("root")
    p.add_argument("--repo-name", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--include", action="append")
    p.add_argument("--exclude", action="append")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("annotate", help="describe and embed every node")
    p.add_argument("--graph", required=True)
    p.add_argument("--out")
    p.add_argument("--describer", default=None, help="'local' or a base URL")
    p.add_argument("--embedder", default=None, help="'local' or a base URL")
    p.add_argument("--size-limit", type=int, default=annotate.DEFAULT_SIZE_LIMIT)
    p.set_defaults(func=cmd_annotate)

    p = sub.add_parser("query", help="run a Cypher query")
    p.add_argument("--graph", required=True)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--cypher")
    g.add_argument("--file")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("search", help="MCTS search for a natural-language query")
    p.add_argument("--graph", required=True)
    p.add_argument("--query", required=True)
    _search_flags(p)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("route", help="entity lookup with search fallback")
    p.add_argument("--graph", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--translator", default=None, help="'local' or a base URL")
    _search_flags(p)
    p.set_defaults(func=cmd_route)

    p = sub.add_parser("eval", help="score a retrieval mode against qrels")
    p.add_argument("--graph", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--mode", choices=("mcts", "entity", "router"), default="mcts")
    p.add_argument("--sweep", help="comma-separated iteration counts")
    p.add_argument("--out", required=True)
    p.add_argument("--csv", help="write sweep curves as CSV")
    p.add_argument("--translator", default=None, help="'local' or a base URL")
    _search_flags(p)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=args.log_level,
        stream=sys.stderr,
        format="%(asctime)s level=%(levelname)s logger=%(name)s msg=%(message)s",
    )
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"repokg {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (GraphError, builder.DuplicateQualifiedName) as exc:
        print(f"repokg {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except EncoderError as exc:
        print(f"repokg {args.command}: backend failure: {exc}", file=sys.stderr)
        return EXIT_BACKEND


if __name__ == "__main__":
    sys.exit(main())
