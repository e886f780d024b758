"""Graph construction: FileTransfer ingestion and import stitching."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

from repokg.graph import CodeGraph, edge_is_legal
from repokg.parser import FileTransfer, ImportRecord, scan_repository

logger = logging.getLogger(__name__)

_TOP_LEVEL = ("Class", "Function", "GlobalVariable")


class DuplicateQualifiedName(Exception):
    pass


@dataclass
class ResolutionReport:
    resolved: int = 0
    unresolved: list[dict[str, Any]] = field(default_factory=list)
    dropped_edges: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {"resolved": self.resolved, "unresolved": self.unresolved}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass
class BuildResult:
    graph: CodeGraph
    report: ResolutionReport
    diagnostics: list[str]


def normalize_module(module: str, importer: str, importer_is_package: bool) -> str:
    """Absolute dotted path for a possibly relative ``module``."""
    if not module.startswith("."):
        return module
    level = len(module) - len(module.lstrip("."))
    rest = module[level:]
    parts = importer.split(".") if importer else []
    if not importer_is_package:
        parts = parts[:-1]
    if level > 1:
        parts = parts[: max(0, len(parts) - (level - 1))]
    if rest:
        parts.append(rest)
    return ".".join(parts)


def _import_props(rec: ImportRecord, importer: str, is_package: bool, star: bool = False) -> dict[str, Any]:
    module = normalize_module(rec.module, importer, is_package)
    dotted = rec.dotted_folder_name
    if dotted is not None:
        dotted = f"{module}.{rec.name}" if module else rec.name
    return {
        "name": module if rec.is_module_import else rec.name,
        "module": module,
        "alias": rec.alias,
        "dotted_folder_name": dotted,
        "module_name": importer,
        "star": "1" if star else None,
    }


def ingest(transfers: Sequence[FileTransfer], repo_name: str) -> CodeGraph:
    """Materialize FileTransfers as a graph with temporary Import nodes."""
    graph = CodeGraph()
    repo = graph.add_node("Repo", {"name": repo_name})
    keys: dict[str, int] = {}
    for ft in transfers:
        local: dict[str, int] = {}
        for ent in ft.entities:
            if ent.key in keys:
                raise DuplicateQualifiedName(f"{ent.key} defined by more than one file ({ft.source.path})")
            if ent.kind == "Module":
                props = {"name": ent.name, "local_name": ent.name.rsplit(".", 1)[-1], "code": ent.code}
            else:
                props = {"name": ent.name, "code": ent.code, "module_name": ent.module_name}
                if ent.kind in ("Class", "Function", "Method"):
                    props["signature"] = ent.signature
                if ent.kind in ("Method", "Field"):
                    props["class"] = ent.class_name
            nid = graph.add_node(ent.kind, props)
            keys[ent.key] = local[ent.key] = nid
            if ent.kind == "Module":
                graph.add_edge(repo, nid, "CONTAINS")
        for src, kind, dst in ft.relations:
            graph.add_edge(local[src], local[dst], kind)
        _ingest_imports(graph, ft, local)
    return graph


def _ingest_imports(graph: CodeGraph, ft: FileTransfer, local: dict[str, int]) -> None:
    importer = ft.source.module_name
    pkg = ft.is_package
    by_alias: dict[str, int] = {}
    by_name: dict[str, int] = {}
    records: dict[int, ImportRecord] = {}
    stars: list[str] = []
    for rec in ft.imports:
        if rec.name == "*":
            stars.append(normalize_module(rec.module, importer, pkg))
            continue
        nid = graph.add_node("Import", _import_props(rec, importer, pkg))
        records[nid] = rec
        # later imports rebind earlier ones
        if rec.alias:
            by_alias[rec.alias] = nid
        else:
            by_name[rec.binding] = nid

    def lookup(name: str) -> int | None:
        return by_alias.get(name, by_name.get(name))

    star_nodes: dict[tuple[str, str], int] = {}

    def star_target(name: str) -> int | None:
        # one placeholder per (star module, name); resolution tries the modules in order
        if not stars or name.startswith("_"):
            return None
        key = (stars[0], name)
        if key not in star_nodes:
            props = {"name": name, "module": ",".join(stars), "module_name": importer, "star": "1"}
            star_nodes[key] = graph.add_node("Import", props)
        return star_nodes[key]

    for src, name in ft.uses_refs:
        target = lookup(name)
        if target is None:
            target = star_target(name)
        if target is not None and edge_is_legal(graph.node(local[src]).kind, "USES", "Import"):
            graph.add_edge(local[src], target, "USES")

    for src, base in ft.inherits_refs:
        head, _, rest = base.partition(".")
        target = lookup(head)
        if target is not None and rest:
            rec = records[target]
            props = graph.node(target).props
            module = props["module"] if rec.is_module_import else (props.get("dotted_folder_name") or props["name"])
            if rec.is_module_import and rec.alias is None:
                # `import a.b` binds `a`; `a.b.C` names C in a.b
                module, _, _ = f"{head}.{rest}".rpartition(".")
            else:
                module = ".".join([module, *rest.split(".")[:-1]])
            target = graph.add_node(
                "Import",
                {"name": rest.split(".")[-1], "module": module, "dotted_folder_name": f"{module}.{rest.split('.')[-1]}", "module_name": importer},
            )
        elif target is None and not rest:
            target = star_target(head)
        if target is not None:
            graph.add_edge(local[src], target, "INHERITS")


class _Resolver:
    def __init__(self, graph: CodeGraph) -> None:
        self.graph = graph
        self.modules: dict[str, int] = {}
        for nid in graph.nodes_of_kind("Module"):
            self.modules[graph.node(nid).props["name"]] = nid
        self.heads = {m.split(".")[0] for m in self.modules}

    def module_node(self, module: str, fuzzy: bool) -> int | None:
        if module in self.modules:
            return self.modules[module]
        if fuzzy and module:
            hits = [nid for name, nid in self.modules.items() if name.endswith("." + module)]
            if len(hits) == 1:
                return hits[0]
        return None

    def is_internal(self, module: str) -> bool:
        if not module:
            return True
        if module.split(".")[0] in self.heads:
            return True
        return any(name.endswith("." + module) for name in self.modules)

    def member(self, module_id: int, name: str) -> int | None:
        for nid, kind in self.graph.neighbors(module_id, "out", ["CONTAINS"]):
            node = self.graph.node(nid)
            if node.kind in _TOP_LEVEL and node.props["name"] == name:
                return nid
        return None

    def unique_by_name(self, name: str) -> int | None:
        hits = [
            nid
            for kind in _TOP_LEVEL
            for nid in self.graph.lookup(kind, name)
            if any(self.graph.node(p).kind == "Module" for p, _ in self.graph.neighbors(nid, "in", ["CONTAINS"]))
        ]
        return hits[0] if len(hits) == 1 else None

    def resolve(self, imp_id: int) -> tuple[int | None, str]:
        props = self.graph.node(imp_id).props
        name, module = props["name"], props["module"]
        if props.get("star"):
            for mod in module.split(","):
                mid = self.module_node(mod, fuzzy=True)
                if mid is not None:
                    hit = self.member(mid, name)
                    if hit is not None:
                        return hit, "star"
            return None, "star"
        if props.get("dotted_folder_name") is None:
            # plain `import a.b`
            mid = self.module_node(module, fuzzy=False)
            if mid is not None:
                return mid, "exact"
            if not self.is_internal(module):
                return None, "external"
            mid = self.module_node(module, fuzzy=True)
            return (mid, "fallback") if mid is not None else (None, "not found")
        # (1) exact module + member, or the submodule itself
        mid = self.module_node(module, fuzzy=False)
        if mid is not None:
            hit = self.member(mid, name)
            if hit is not None:
                return hit, "exact"
        sub = self.module_node(props["dotted_folder_name"], fuzzy=False)
        if sub is not None:
            return sub, "exact"
        if not self.is_internal(module):
            return None, "external"
        # (2) fuzzy module path, then a repository-wide unique name
        mid = self.module_node(module, fuzzy=True)
        if mid is not None:
            hit = self.member(mid, name)
            if hit is not None:
                return hit, "fallback"
        sub = self.module_node(props["dotted_folder_name"], fuzzy=True)
        if sub is not None:
            return sub, "fallback"
        hit = self.unique_by_name(name)
        if hit is not None:
            return hit, "fallback"
        return None, "not found"


def resolve_imports(graph: CodeGraph) -> ResolutionReport:
    """Replace every Import placeholder by its target entity, or drop it.

    Matching order: exact dotted module plus member name (or the submodule
    itself), then a suffix match on the module path, then a unique
    repository-wide name.  Imports of modules outside the repository are
    never matched.  Edges into unmatched imports, and edges the schema does
    not allow on the matched target, are dropped.
    """
    report = ResolutionReport()
    resolver = _Resolver(graph)
    for imp in graph.nodes_of_kind("Import"):
        props = graph.node(imp).props
        target, how = resolver.resolve(imp)
        incoming = graph.neighbors(imp, "in")
        if target is not None:
            tkind = graph.node(target).kind
            for src, kind in incoming:
                if src == target or not edge_is_legal(graph.node(src).kind, kind, tkind):
                    graph.remove_edge(src, imp, kind)
                    report.dropped_edges += 1
            graph.redirect_incoming_edges(imp, target)
            graph.remove_node(imp)
            report.resolved += 1
            continue
        for src, kind in incoming:
            graph.remove_edge(src, imp, kind)
            report.dropped_edges += 1
        graph.remove_node(imp)
        if how == "star":
            continue
        report.unresolved.append(
            {
                "name": props["name"],
                "module": props["module"],
                "importer": props.get("module_name"),
                "reason": how,
            }
        )
    return report


def build_with_report(
    root: str | os.PathLike[str],
    repo_name: str,
    include: Iterable[str] = ("*.py",),
    exclude: Iterable[str] = (),
) -> BuildResult:
    diagnostics: list[str] = []
    transfers = scan_repository(root, include, exclude, diagnostics=diagnostics)
    graph = ingest(transfers, repo_name)
    report = resolve_imports(graph)
    logger.info(
        "built graph for %s: %d nodes, %d edges, %d imports resolved, %d unresolved",
        repo_name,
        len(graph),
        graph.edge_count(),
        report.resolved,
        len(report.unresolved),
    )
    return BuildResult(graph.freeze(), report, diagnostics)


def build(
    root: str | os.PathLike[str],
    repo_name: str,
    include: Iterable[str] = ("*.py",),
    exclude: Iterable[str] = (),
) -> CodeGraph:
    """Scan, ingest and stitch a repository; the returned graph is frozen."""
    return build_with_report(root, repo_name, include, exclude).graph
