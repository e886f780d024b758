"""File-level parsing: source files to FileTransfer records.

Each file is parsed with tree-sitter and walked once to collect the six
entity kinds (Module, Class, Function, Method, Field, GlobalVariable), the
intra-file structural relations between them, the file's imports, and the
names it references but does not define.  The resulting FileTransfer is a
plain JSON-serializable record; graph ingestion never looks at syntax trees.
"""

from __future__ import annotations

import fnmatch
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path, PurePosixPath
from typing import Any, Iterable, Iterator

import tree_sitter
import tree_sitter_python

logger = logging.getLogger(__name__)

ENTITY_KINDS = ("Module", "Class", "Function", "Method", "Field", "GlobalVariable")
RELATION_KINDS = ("CONTAINS", "HAS_METHOD", "HAS_FIELD", "INHERITS", "USES")

_PYTHON = tree_sitter.Language(tree_sitter_python.language())

# statements whose blocks still belong to the enclosing scope
_COMPOUND = {
    "if_statement",
    "elif_clause",
    "else_clause",
    "try_statement",
    "except_clause",
    "except_group_clause",
    "finally_clause",
    "with_statement",
    "for_statement",
    "while_statement",
    "block",
}
_DEFINITIONS = {"function_definition", "class_definition", "decorated_definition"}


class ParseError(Exception):
    """Base class for repository parsing errors."""


class UndecodableFile(ParseError):
    def __init__(self, path: str, reason: str) -> None:
        super().__init__(f"{path}: {reason}")
        self.path = path
        self.reason = reason


class RootNotFound(ParseError):
    pass


def python_grammar() -> tree_sitter.Language:
    return _PYTHON


@dataclass(frozen=True)
class SourceFile:
    path: str
    module_name: str
    text: str

    def to_dict(self) -> dict[str, str]:
        # text is carried by the Module entity's code
        return {"path": self.path, "module_name": self.module_name}


@dataclass(frozen=True)
class EntityRecord:
    kind: str
    name: str
    signature: str
    code: str
    module_name: str
    qualname: str
    span: tuple[int, int]
    class_name: str | None = None

    @property
    def key(self) -> str:
        return f"{self.kind}:{self.qualname}"

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "name": self.name,
            "signature": self.signature,
            "code": self.code,
            "module_name": self.module_name,
            "qualname": self.qualname,
            "class_name": self.class_name,
            "span": list(self.span),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> EntityRecord:
        return cls(
            kind=data["kind"],
            name=data["name"],
            signature=data["signature"],
            code=data["code"],
            module_name=data["module_name"],
            qualname=data["qualname"],
            class_name=data.get("class_name"),
            span=(int(data["span"][0]), int(data["span"][1])),
        )


@dataclass(frozen=True)
class ImportRecord:
    """One imported binding.

    ``dotted_folder_name`` is None for plain ``import a.b`` statements (the
    record then names a module); for ``from m import x`` it holds the
    submodule path ``m.x`` that ``x`` would denote if it is a module.
    """

    name: str
    module: str
    alias: str | None = None
    dotted_folder_name: str | None = None

    @property
    def is_module_import(self) -> bool:
        return self.dotted_folder_name is None and self.name != "*"

    @property
    def binding(self) -> str:
        """Local name the import binds in the importing file."""
        if self.alias:
            return self.alias
        if self.is_module_import:
            return self.name.split(".")[0]
        return self.name

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "module": self.module,
            "alias": self.alias,
            "dotted_folder_name": self.dotted_folder_name,
        }


@dataclass(frozen=True)
class FileTransfer:
    source: SourceFile
    entities: tuple[EntityRecord, ...]
    relations: tuple[tuple[str, str, str], ...]
    imports: tuple[ImportRecord, ...]
    uses_refs: tuple[tuple[str, str], ...]
    inherits_refs: tuple[tuple[str, str], ...] = ()

    @property
    def is_package(self) -> bool:
        return PurePosixPath(self.source.path).name == "__init__.py"

    def entity(self, key: str) -> EntityRecord:
        for ent in self.entities:
            if ent.key == key:
                return ent
        raise KeyError(key)

    def to_dict(self) -> dict[str, Any]:
        return {
            "source": self.source.to_dict(),
            "entities": [e.to_dict() for e in self.entities],
            "relations": [list(r) for r in self.relations],
            "imports": [i.to_dict() for i in self.imports],
            "uses_refs": [list(r) for r in self.uses_refs],
            "inherits_refs": [list(r) for r in self.inherits_refs],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> FileTransfer:
        entities = tuple(EntityRecord.from_dict(e) for e in data["entities"])
        text = next((e.code for e in entities if e.kind == "Module"), "")
        src = data["source"]
        return cls(
            source=SourceFile(src["path"], src["module_name"], text),
            entities=entities,
            relations=tuple(tuple(r) for r in data["relations"]),  # type: ignore[misc]
            imports=tuple(ImportRecord(**i) for i in data["imports"]),
            uses_refs=tuple(tuple(r) for r in data["uses_refs"]),  # type: ignore[misc]
            inherits_refs=tuple(tuple(r) for r in data.get("inherits_refs", ())),  # type: ignore[misc]
        )

    @classmethod
    def from_json(cls, text: str) -> FileTransfer:
        return cls.from_dict(json.loads(text))


def module_name_for(path: str, root_name: str = "") -> str:
    """Dotted module name for a repository-relative ``.py`` path."""
    parts = list(PurePosixPath(path).with_suffix("").parts)
    if parts and parts[-1] == "__init__":
        parts.pop()
    if not parts:
        return root_name or "__init__"
    return ".".join(parts)


def load_source(root: str | os.PathLike[str], path: str, root_name: str = "") -> SourceFile:
    raw = (Path(root) / path).read_bytes()
    try:
        text = raw.decode("utf-8-sig")
    except UnicodeDecodeError as exc:
        raise UndecodableFile(path, str(exc)) from exc
    return SourceFile(path=path, module_name=module_name_for(path, root_name), text=text)


def parse_file(file: SourceFile, grammar: tree_sitter.Language | None = None) -> tree_sitter.Tree:
    """Parse ``file`` into a concrete syntax tree.

    Syntax errors do not raise; tree-sitter marks them with ERROR / MISSING
    nodes and the rest of the file is still covered by the tree.
    """
    parser = tree_sitter.Parser(grammar or _PYTHON)
    return parser.parse(file.text.encode("utf-8"))


def _text(node: tree_sitter.Node | None) -> str:
    if node is None or node.text is None:
        return ""
    return node.text.decode("utf-8", errors="replace")


def _unwrap(node: tree_sitter.Node) -> tree_sitter.Node:
    if node.type == "decorated_definition":
        inner = node.child_by_field_name("definition")
        if inner is not None:
            return inner
    return node


def _signature(definition: tree_sitter.Node) -> str:
    body = definition.child_by_field_name("body")
    if body is None:
        return _text(definition).split("\n", 1)[0].rstrip().rstrip(":")
    raw = definition.text[: body.start_byte - definition.start_byte]  # type: ignore[index]
    return raw.decode("utf-8", errors="replace").rstrip().rstrip(":").rstrip()


def _scope_statements(block: tree_sitter.Node) -> Iterator[tree_sitter.Node]:
    """Statements of a scope, descending through non-defining compound statements."""
    for child in block.named_children:
        if child.type in _DEFINITIONS or child.type == "expression_statement":
            yield child
        elif child.type in _COMPOUND:
            yield from _scope_statements(child)


def _assignment_targets(stmt: tree_sitter.Node) -> list[str]:
    names: list[str] = []
    for expr in stmt.named_children:
        node: tree_sitter.Node | None = expr
        while node is not None and node.type == "assignment":
            left = node.child_by_field_name("left")
            if left is not None:
                names.extend(_pattern_names(left))
            node = node.child_by_field_name("right")
    return names


def _pattern_names(node: tree_sitter.Node) -> list[str]:
    if node.type == "identifier":
        return [_text(node)]
    if node.type in ("pattern_list", "tuple_pattern", "list_pattern", "parenthesized_expression", "list_splat_pattern"):
        out: list[str] = []
        for child in node.named_children:
            out.extend(_pattern_names(child))
        return out
    return []


def _assignment_values(stmt: tree_sitter.Node) -> list[tree_sitter.Node]:
    """Right-hand sides and annotations of an assignment statement."""
    out: list[tree_sitter.Node] = []
    for expr in stmt.named_children:
        node: tree_sitter.Node | None = expr
        while node is not None and node.type == "assignment":
            typ = node.child_by_field_name("type")
            if typ is not None:
                out.append(typ)
            right = node.child_by_field_name("right")
            if right is not None and right.type != "assignment":
                out.append(right)
            node = right
    return out


def _is_assignment(stmt: tree_sitter.Node) -> bool:
    return (
        stmt.type == "expression_statement"
        and stmt.named_child_count > 0
        and stmt.named_children[0].type == "assignment"
    )


@dataclass
class _Scope:
    key: str | None  # None for the module scope
    kind: str  # "module" | "class" | "function"
    parent: _Scope | None
    names: dict[str, str] = field(default_factory=dict)


@dataclass
class _Pending:
    key: str
    scope: _Scope  # scope in which the entity's own references resolve
    nodes: list[tree_sitter.Node]
    local_names: set[str]
    bases: list[str] = field(default_factory=list)


class _Extractor:
    def __init__(self, file: SourceFile) -> None:
        self.file = file
        self.module = file.module_name
        self.entities: dict[str, EntityRecord] = {}
        self.relations: list[tuple[str, str, str]] = []
        self.imports: list[ImportRecord] = []
        self.pending: dict[str, _Pending] = {}

    # -- entities ---------------------------------------------------------
    def _add(self, ent: EntityRecord) -> None:
        # last definition wins: drop the earlier record and re-insert
        self.entities.pop(ent.key, None)
        self.entities[ent.key] = ent

    def _record(
        self,
        kind: str,
        name: str,
        qual: str,
        node: tree_sitter.Node,
        signature: str,
        class_name: str | None = None,
    ) -> EntityRecord:
        ent = EntityRecord(
            kind=kind,
            name=name,
            signature=signature,
            code=_text(node),
            module_name=self.module,
            qualname=qual,
            span=(node.start_point[0] + 1, node.end_point[0] + 1),
            class_name=class_name,
        )
        self._add(ent)
        return ent

    def run(self, tree: tree_sitter.Tree) -> FileTransfer:
        root = tree.root_node
        text = self.file.text
        n_lines = max(1, text.count("\n") + (0 if text.endswith("\n") or not text else 1))
        module_key = f"Module:{self.module}"
        self._add(
            EntityRecord(
                kind="Module",
                name=self.module,
                signature="",
                code=text,
                module_name=self.module,
                qualname=self.module,
                span=(1, n_lines),
            )
        )
        scope = _Scope(key=module_key, kind="module", parent=None)
        self._walk_scope(root, scope, self.module, owner_kind="Module", class_name=None)
        self._collect_imports(root)
        return self._finish()

    def _walk_scope(
        self,
        block: tree_sitter.Node,
        scope: _Scope,
        prefix: str,
        owner_kind: str,
        class_name: str | None,
    ) -> None:
        owner = scope.key
        for stmt in _scope_statements(block):
            if stmt.type in _DEFINITIONS:
                self._definition(stmt, scope, prefix, owner_kind, class_name)
            elif _is_assignment(stmt) and owner_kind in ("Module", "Class"):
                kind = "GlobalVariable" if owner_kind == "Module" else "Field"
                edge = "CONTAINS" if kind == "GlobalVariable" else "HAS_FIELD"
                first_line = _text(stmt).split("\n", 1)[0].rstrip()
                for name in _assignment_targets(stmt):
                    qual = f"{prefix}.{name}"
                    ent = self._record(kind, name, qual, stmt, first_line, class_name if kind == "Field" else None)
                    scope.names[name] = ent.key
                    self.relations.append((owner, edge, ent.key))  # type: ignore[arg-type]
                    if kind == "GlobalVariable":
                        self.pending[ent.key] = _Pending(ent.key, scope, _assignment_values(stmt), set())

    def _definition(
        self,
        stmt: tree_sitter.Node,
        scope: _Scope,
        prefix: str,
        owner_kind: str,
        class_name: str | None,
    ) -> None:
        definition = _unwrap(stmt)
        name_node = definition.child_by_field_name("name")
        if name_node is None:
            return
        name = _text(name_node)
        qual = f"{prefix}.{name}"
        decorators = [c for c in stmt.named_children if c.type == "decorator"] if stmt is not definition else []
        if definition.type == "class_definition":
            ent = self._record("Class", name, qual, stmt, _signature(definition))
            scope.names[name] = ent.key
            self.relations.append((scope.key, "CONTAINS", ent.key))  # type: ignore[arg-type]
            inner = _Scope(key=ent.key, kind="class", parent=scope)
            body = definition.child_by_field_name("body")
            bases: list[str] = []
            supers = definition.child_by_field_name("superclasses")
            if supers is not None:
                for arg in supers.named_children:
                    if arg.type in ("identifier", "attribute"):
                        bases.append(_text(arg))
            if body is not None:
                self._walk_scope(body, inner, qual, owner_kind="Class", class_name=name)
            field_names = {n for n, k in inner.names.items() if k.startswith("Field:")}
            own = decorators + ([body] if body is not None else [])
            self.pending[ent.key] = _Pending(ent.key, inner, own, field_names, bases)
            return

        if owner_kind == "Class":
            kind, edge = "Method", "HAS_METHOD"
        else:
            kind, edge = "Function", "CONTAINS"
        ent = self._record(kind, name, qual, stmt, _signature(definition), class_name if kind == "Method" else None)
        self.relations.append((scope.key, edge, ent.key))  # type: ignore[arg-type]
        if kind == "Function":
            scope.names[name] = ent.key
        inner = _Scope(key=ent.key, kind="function", parent=scope)
        body = definition.child_by_field_name("body")
        if body is not None:
            self._walk_scope(body, inner, qual, owner_kind=kind, class_name=None)
        params = definition.child_by_field_name("parameters")
        ret = definition.child_by_field_name("return_type")
        nodes = decorators + [n for n in (params, ret, body) if n is not None]
        self.pending[ent.key] = _Pending(ent.key, inner, nodes, _function_locals(definition))

    # -- imports ----------------------------------------------------------
    def _collect_imports(self, root: tree_sitter.Node) -> None:
        stack = [root]
        found: list[tree_sitter.Node] = []
        while stack:
            node = stack.pop()
            if node.type in ("import_statement", "import_from_statement"):
                found.append(node)
                continue
            stack.extend(reversed(node.named_children))
        for node in found:
            if node.type == "import_statement":
                for item in node.children_by_field_name("name"):
                    if item.type == "aliased_import":
                        dotted = _text(item.child_by_field_name("name"))
                        alias = _text(item.child_by_field_name("alias")) or None
                    else:
                        dotted, alias = _text(item), None
                    if dotted:
                        self.imports.append(ImportRecord(name=dotted, module=dotted, alias=alias))
            else:
                module_node = node.child_by_field_name("module_name")
                module = _text(module_node)
                if any(c.type == "wildcard_import" for c in node.named_children):
                    self.imports.append(ImportRecord(name="*", module=module))
                    continue
                for item in node.children_by_field_name("name"):
                    if item.type == "aliased_import":
                        name = _text(item.child_by_field_name("name"))
                        alias = _text(item.child_by_field_name("alias")) or None
                    else:
                        name, alias = _text(item), None
                    if not name:
                        continue
                    sep = "" if module.endswith(".") else "."
                    self.imports.append(
                        ImportRecord(name=name, module=module, alias=alias, dotted_folder_name=f"{module}{sep}{name}")
                    )

    # -- references -------------------------------------------------------
    def _resolve(self, name: str, scope: _Scope | None, skip_class: bool) -> str | None:
        first = True
        while scope is not None:
            if not (skip_class and scope.kind == "class" and not first):
                key = scope.names.get(name)
                if key is not None and key in self.entities:
                    return key
            first = False
            scope = scope.parent
        return None

    def _finish(self) -> FileTransfer:
        uses_refs: list[tuple[str, str]] = []
        inherits_refs: list[tuple[str, str]] = []
        relations = list(dict.fromkeys(self.relations))
        for key, item in self.pending.items():
            if key not in self.entities:
                continue
            for base in item.bases:
                target = self._resolve(base, item.scope.parent, skip_class=False) if "." not in base else None
                if target is not None and target.startswith("Class:") and target != key:
                    relations.append((key, "INHERITS", target))
                else:
                    inherits_refs.append((key, base))
            for ref in _references(item.nodes, item.local_names):
                # a function's own scope holds its nested defs; class scopes are invisible to methods
                target = self._resolve(ref, item.scope, skip_class=True)
                if target is None:
                    uses_refs.append((key, ref))
                elif target != key and not target.startswith(("Field:", "Method:")):
                    relations.append((key, "USES", target))
        live = set(self.entities)
        relations = [r for r in dict.fromkeys(relations) if r[0] in live and r[2] in live]
        return FileTransfer(
            source=self.file,
            entities=tuple(self.entities.values()),
            relations=tuple(relations),
            imports=tuple(self.imports),
            uses_refs=tuple(dict.fromkeys(uses_refs)),
            inherits_refs=tuple(dict.fromkeys(inherits_refs)),
        )


def _function_locals(definition: tree_sitter.Node) -> set[str]:
    """Names bound inside a function (parameters, assignments, loop targets...)."""
    names: set[str] = set()
    declared_global: set[str] = set()
    params = definition.child_by_field_name("parameters")
    if params is not None:
        names.update(_param_names(params))
    body = definition.child_by_field_name("body")
    stack = [body] if body is not None else []
    while stack:
        node = stack.pop()
        t = node.type
        if t in ("function_definition", "class_definition"):
            continue
        if t in ("global_statement", "nonlocal_statement"):
            declared_global.update(_text(c) for c in node.named_children if c.type == "identifier")
        elif t in ("assignment", "augmented_assignment"):
            left = node.child_by_field_name("left")
            if left is not None:
                names.update(_pattern_names(left))
        elif t in ("for_statement", "for_in_clause"):
            left = node.child_by_field_name("left")
            if left is not None:
                names.update(_pattern_names(left))
        elif t == "as_pattern_target" or (t == "as_pattern" and node.child_by_field_name("alias") is not None):
            alias = node if t == "as_pattern_target" else node.child_by_field_name("alias")
            for c in [alias] + list(alias.named_children):  # type: ignore[operator,union-attr]
                if c.type == "identifier":
                    names.add(_text(c))
        elif t == "named_expression":
            names.update(_pattern_names(node.child_by_field_name("name")))  # type: ignore[arg-type]
        elif t == "lambda_parameters":
            names.update(_param_names(node))
        stack.extend(node.named_children)
    return names - declared_global


def _param_names(params: tree_sitter.Node) -> set[str]:
    names: set[str] = set()
    for p in params.named_children:
        if p.type == "identifier":
            names.add(_text(p))
        elif p.type in ("default_parameter", "typed_default_parameter"):
            names.add(_text(p.child_by_field_name("name")))
        elif p.type in ("typed_parameter", "list_splat_pattern", "dictionary_splat_pattern"):
            for c in p.named_children:
                if c.type == "identifier":
                    names.add(_text(c))
                    break
                if c.type in ("list_splat_pattern", "dictionary_splat_pattern"):
                    names.update(_text(i) for i in c.named_children if i.type == "identifier")
    return names


def _references(nodes: Iterable[tree_sitter.Node], local_names: set[str]) -> list[str]:
    """Free identifier references under ``nodes`` in source order.

    Attribute names and keyword-argument names are not references; for
    ``a.b.c`` only ``a`` is.  Nested definitions are skipped because their
    references belong to the nested entity, and comprehension variables are
    treated as local.
    """
    out: list[str] = []
    stack = list(reversed(list(nodes)))
    comp_locals: set[str] = set()
    while stack:
        node = stack.pop()
        t = node.type
        if t in _DEFINITIONS:
            continue
        if t in ("for_in_clause",):
            left = node.child_by_field_name("left")
            if left is not None:
                comp_locals.update(_pattern_names(left))
        if t == "lambda_parameters":
            comp_locals.update(_param_names(node))
            continue
        if t == "identifier":
            parent = node.parent
            if parent is not None:
                if parent.type == "attribute" and parent.child_by_field_name("attribute") == node:
                    continue
                if parent.type == "keyword_argument" and parent.child_by_field_name("name") == node:
                    continue
                if parent.type in ("default_parameter", "typed_default_parameter") and parent.child_by_field_name("name") == node:
                    continue
                if parent.type in ("parameters", "lambda_parameters", "typed_parameter", "list_splat_pattern", "dictionary_splat_pattern") and parent.parent is not None and parent.parent.type in ("parameters", "lambda_parameters", "function_definition", "lambda"):
                    continue
                if parent.type in ("global_statement", "nonlocal_statement"):
                    continue
                if parent.type in ("dotted_name", "aliased_import", "import_statement", "import_from_statement"):
                    continue
            name = _text(node)
            if name not in local_names and name not in comp_locals:
                out.append(name)
            continue
        stack.extend(reversed(node.named_children))
    return list(dict.fromkeys(out))


def extract_entities(tree: tree_sitter.Tree, file: SourceFile) -> FileTransfer:
    """Walk ``tree`` and build the FileTransfer for ``file``."""
    return _Extractor(file).run(tree)


def _matches(path: str, patterns: Iterable[str]) -> bool:
    name = PurePosixPath(path).name
    return any(fnmatch.fnmatch(path, p) or fnmatch.fnmatch(name, p) for p in patterns)


def iter_source_paths(
    root: str | os.PathLike[str],
    include: Iterable[str] = ("*.py",),
    exclude: Iterable[str] = (),
) -> list[str]:
    base = Path(root)
    if not base.is_dir():
        raise RootNotFound(str(root))
    include, exclude = tuple(include), tuple(exclude)
    seen_dirs: set[tuple[int, int]] = set()
    found: list[str] = []
    for dirpath, dirnames, filenames in os.walk(base, followlinks=True):
        st = os.stat(dirpath)
        ident = (st.st_dev, st.st_ino)
        if ident in seen_dirs:
            dirnames[:] = []
            continue
        seen_dirs.add(ident)
        dirnames[:] = sorted(d for d in dirnames if not d.startswith(".") and d != "__pycache__")
        for fname in filenames:
            rel = (Path(dirpath) / fname).relative_to(base).as_posix()
            if _matches(rel, include) and not _matches(rel, exclude):
                found.append(rel)
    return sorted(found)


def scan_repository(
    root: str | os.PathLike[str],
    include: Iterable[str] = ("*.py",),
    exclude: Iterable[str] = (),
    diagnostics: list[str] | None = None,
    grammar: tree_sitter.Language | None = None,
) -> list[FileTransfer]:
    """Parse every matching file under ``root``, ordered by relative path.

    Undecodable files are skipped; a message is appended to ``diagnostics``
    when a list is supplied.  Hidden directories and ``__pycache__`` are not
    entered, and directories reached twice through symlinks are skipped.
    """
    root_name = Path(root).resolve().name
    transfers: list[FileTransfer] = []
    for rel in iter_source_paths(root, include, exclude):
        try:
            src = load_source(root, rel, root_name)
        except (UndecodableFile, OSError) as exc:
            logger.warning("skipping %s: %s", rel, exc)
            if diagnostics is not None:
                diagnostics.append(f"{rel}: {exc}")
            continue
        tree = parse_file(src, grammar)
        if tree.root_node.has_error and diagnostics is not None:
            diagnostics.append(f"{rel}: syntax errors, partial extraction")
        transfers.append(extract_entities(tree, src))
    return transfers
