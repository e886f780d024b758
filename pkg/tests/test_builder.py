from __future__ import annotations

import random
from pathlib import Path

from conftest import FIXTURE_DIR, by_name
from repokg.builder import build, build_with_report, ingest, normalize_module, resolve_imports
from repokg.graph import CodeGraph
from repokg.parser import scan_repository

FIXTURE_EDGES = {
    ("demo", "CONTAINS", "base"),
    ("demo", "CONTAINS", "extended"),
    ("base", "CONTAINS", "precision"),
    ("base", "CONTAINS", "Calculator"),
    ("base", "CONTAINS", "format_result"),
    ("Calculator", "HAS_METHOD", "add"),
    ("Calculator", "HAS_METHOD", "multiply"),
    ("format_result", "USES", "precision"),
    ("extended", "CONTAINS", "Scientific"),
    ("extended", "CONTAINS", "quick_add"),
    ("extended", "CONTAINS", "demo"),
    ("Scientific", "HAS_METHOD", "divide"),
    ("Scientific", "INHERITS", "Calculator"),
    ("divide", "USES", "precision"),
    ("quick_add", "USES", "Calculator"),
    ("demo", "USES", "format_result"),
    ("demo", "USES", "Scientific"),
    ("demo", "USES", "quick_add"),
}


def named_edges(g: CodeGraph) -> set[tuple[str, str, str]]:
    return {(g.node(s).name, k, g.node(d).name) for s, d, k in g.edges()}


def write_repo(root: Path, files: dict[str, str]) -> Path:
    for rel, text in files.items():
        path = root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    return root


def test_fixture_graph_inventory(fixture_graph):
    g = fixture_graph
    kinds = sorted(n.kind for n in g.nodes.values())
    assert kinds == sorted(
        ["Repo", "Module", "Module", "Class", "Class", "Method", "Method", "Method", "Function", "Function", "Function", "GlobalVariable"]
    )
    assert named_edges(g) == FIXTURE_EDGES
    assert g.nodes_of_kind("Import") == []
    assert g.frozen


def test_ingest_creates_import_placeholders():
    g = ingest(scan_repository(FIXTURE_DIR), "demo")
    imports = {g.node(n).name: n for n in g.nodes_of_kind("Import")}
    assert set(imports) == {"Calculator", "precision", "format_result"}
    for nid in imports.values():
        srcs = g.neighbors(nid, "in")
        assert srcs and all(g.node(s).props.get("module_name") == "extended" for s, _ in srcs)
    kinds = {k for n in imports.values() for _, k in g.neighbors(n, "in")}
    assert kinds == {"USES", "INHERITS"}


def test_empty_inputs(tmp_path):
    g = ingest([], "r")
    assert [n.kind for n in g.nodes.values()] == ["Repo"]
    report = resolve_imports(g)
    assert (report.resolved, report.unresolved) == (0, [])
    assert len(build(tmp_path, "r")) == 1


def test_unknown_name_creates_no_edge(tmp_path):
    write_repo(tmp_path, {"m.py": "def f():\n    return mystery()\n"})
    g = build(tmp_path, "r")
    assert [e for e in g.edges() if e[2] == "USES"] == []


def test_module_path_disambiguates_same_names(tmp_path):
    write_repo(
        tmp_path,
        {
            "a/util.py": "def helper():\n    return 1\n",
            "b/util.py": "def helper():\n    return 2\n",
            "c.py": "from a.util import helper\n\ndef run():\n    return helper()\n",
        },
    )
    g = build(tmp_path, "r")
    run = by_name(g, "run")
    (target,) = [d for d, k in g.neighbors(run, "out", ["USES"])]
    assert g.node(target).props["module_name"] == "a.util"


def test_relative_alias_module_and_external_imports(tmp_path):
    write_repo(
        tmp_path,
        {
            "pkg/__init__.py": "",
            "pkg/core.py": "class Engine:\n    pass\n\nLIMIT = 3\n",
            "pkg/app.py": (
                "import os\n"
                "from .core import Engine as E\n"
                "from . import core\n"
                "import pkg.core\n\n"
                "class Car(E):\n    pass\n\n"
                "class Boat(pkg.core.Engine):\n    pass\n\n"
                "def start():\n    return os.getcwd(), core.LIMIT\n"
            ),
        },
    )
    res = build_with_report(tmp_path, "r")
    g = res.graph
    assert named_edges(g) >= {
        ("Car", "INHERITS", "Engine"),
        ("Boat", "INHERITS", "Engine"),
        ("start", "USES", "pkg.core"),
    }
    assert g.nodes_of_kind("Import") == []
    assert [u["name"] for u in res.report.unresolved] == ["os"]
    assert res.report.unresolved[0]["reason"] == "external"


def test_star_import_resolves_used_names(tmp_path):
    write_repo(
        tmp_path,
        {
            "lib.py": "def tool():\n    return 1\n",
            "main.py": "from lib import *\n\ndef go():\n    return tool() + other()\n",
        },
    )
    res = build_with_report(tmp_path, "r")
    assert ("go", "USES", "tool") in named_edges(res.graph)
    assert res.report.unresolved == []


def test_unique_name_fallback(tmp_path):
    write_repo(
        tmp_path,
        {
            "deep/inner/tools.py": "def tool():\n    return 1\n",
            "main.py": "from inner.tools import tool\n\ndef go():\n    return tool()\n",
        },
    )
    assert ("go", "USES", "tool") in named_edges(build(tmp_path, "r"))


def test_normalize_module():
    assert normalize_module(".core", "pkg.app", False) == "pkg.core"
    assert normalize_module("..x", "pkg.sub.mod", False) == "pkg.x"
    assert normalize_module(".", "pkg", True) == "pkg"
    assert normalize_module("abs.mod", "pkg.app", False) == "abs.mod"


def test_build_is_deterministic(tmp_path):
    assert build(FIXTURE_DIR, "demo").serialize() == build(FIXTURE_DIR, "demo").serialize()


def test_report_json(tmp_path):
    write_repo(tmp_path, {"m.py": "import numpy\n\ndef f():\n    return numpy.zeros(1)\n"})
    res = build_with_report(tmp_path, "r")
    assert res.report.to_dict() == {
        "resolved": 0,
        "unresolved": [{"name": "numpy", "module": "numpy", "importer": "m", "reason": "external"}],
    }


def _random_repo(rng: random.Random) -> tuple[dict[str, str], set[tuple[str, str, str]]]:
    """Modules importing from earlier modules; returns files and expected cross-file edges."""
    files: dict[str, str] = {}
    defined: list[tuple[str, str, str]] = []  # (module, name, kind)
    expected: set[tuple[str, str, str]] = set()
    for i in range(rng.randint(2, 5)):
        mod = f"pkg.m{i}"
        lines: list[str] = []
        bindings: dict[str, tuple[str, str, str]] = {}
        for module, name, kind in rng.sample(defined, min(len(defined), rng.randint(0, 4))):
            alias = f"{name}_alias" if rng.random() < 0.3 else None
            lines.append(f"from {module} import {name}" + (f" as {alias}" if alias else ""))
            bindings[alias or name] = (module, name, kind)
        for j in range(rng.randint(1, 3)):
            fname = f"f{i}_{j}"
            used = rng.sample(sorted(bindings), min(len(bindings), rng.randint(0, 2)))
            body = " + ".join(f"{u}()" for u in used) or "0"
            lines.append(f"def {fname}():\n    return {body}")
            for u in used:
                expected.add((f"{mod}.{fname}", "USES", f"{bindings[u][0]}.{bindings[u][1]}"))
            defined.append((mod, fname, "Function"))
        cname = f"C{i}"
        bases = [b for b in bindings if bindings[b][2] == "Class"][:1]
        lines.append(f"class {cname}({', '.join(bases)}):\n    pass")
        for b in bases:
            expected.add((f"{mod}.{cname}", "INHERITS", f"{bindings[b][0]}.{bindings[b][1]}"))
        defined.append((mod, cname, "Class"))
        files[f"pkg/m{i}.py"] = "\n\n".join(lines) + "\n"
    files["pkg/__init__.py"] = ""
    return files, expected


def test_stitching_soundness_against_brute_force(tmp_path):
    rng = random.Random(5)
    for case in range(25):
        files, expected = _random_repo(rng)
        root = write_repo(tmp_path / f"case{case}", files)
        g = build(root, "r")
        cross = set()
        for s, d, k in g.edges():
            a, b = g.node(s), g.node(d)
            if k in ("USES", "INHERITS") and a.qualified_module != b.qualified_module:
                cross.add((f"{a.qualified_module}.{a.name}", k, f"{b.qualified_module}.{b.name}"))
        assert cross == expected, files
