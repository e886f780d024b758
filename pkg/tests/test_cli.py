from __future__ import annotations

import json
import subprocess
import sys

import pytest

from conftest import FIXTURE_DIR
from repokg.cli import main
from repokg.evaluation import Qrels, QrelsQuery
from repokg.graph import CodeGraph

ADDITION_QUERY = "Where is the code for addition?"


def run(capsys, *argv: str) -> tuple[int, str]:
    code = main(list(argv))
    return code, capsys.readouterr().out


@pytest.fixture
def graph_file(tmp_path, capsys):
    out = tmp_path / "g.jsonl"
    assert main(["index", str(FIXTURE_DIR), "--repo-name", "demo", "--out", str(out)]) == 0
    capsys.readouterr()
    return out


def test_index(tmp_path, capsys):
    out = tmp_path / "g.jsonl"
    code, text = run(capsys, "index", str(FIXTURE_DIR), "--repo-name", "demo", "--out", str(out))
    assert code == 0
    assert json.loads(text)["nodes"] == 12
    g = CodeGraph.load(str(out))
    assert len(g) == 12 and g.nodes_of_kind("Import") == []
    assert json.loads((tmp_path / "g.resolution.json").read_text())["unresolved"] == []


def test_query_classes(graph_file, capsys):
    code, text = run(capsys, "query", "--graph", str(graph_file), "--cypher", "MATCH (c:Class) RETURN c.name")
    assert code == 0
    assert sorted(r[0] for r in json.loads(text)["rows"]) == ["Calculator", "Scientific"]


def test_search_unannotated_graph(graph_file, capsys):
    code, text = run(capsys, "search", "--graph", str(graph_file), "--query", ADDITION_QUERY, "--embedder", "local", "--reranker", "local")
    assert code == 0
    assert "add" in [r["node"]["name"] for r in json.loads(text)]


def test_annotate_then_search_and_route(graph_file, tmp_path, capsys):
    annotated = tmp_path / "a.jsonl"
    code, text = run(capsys, "annotate", "--graph", str(graph_file), "--out", str(annotated), "--describer", "local", "--embedder", "local")
    assert code == 0 and json.loads(text)["embedded"] == 11
    code, text = run(capsys, "search", "--graph", str(annotated), "--query", ADDITION_QUERY, "--iterations", "50", "--budget", "3")
    ranked = json.loads(text)
    assert code == 0 and len(ranked) == 3 and ranked[0]["node"]["name"] == "add"
    code, text = run(capsys, "route", "--graph", str(annotated), "--query", "What methods does Calculator have?", "--translator", "local")
    assert code == 0 and json.loads(text)["path"] == "entity"


def test_eval_with_sweep(graph_file, tmp_path, capsys):
    qrels = tmp_path / "q.jsonl"
    Qrels([QrelsQuery("q1", ADDITION_QUERY, {"base::Method::Calculator.add": 1})]).save(qrels)
    report = tmp_path / "r.json"
    code, text = run(capsys, "eval", "--graph", str(graph_file), "--qrels", str(qrels), "--sweep", "5,20", "--out", str(report), "--csv", str(tmp_path / "s.csv"))
    assert code == 0
    assert json.loads(text)["recall@10"] == 1.0
    assert json.loads(report.read_text())["sweep"]["iterations"] == [5, 20]
    assert (tmp_path / "s.csv").read_text().startswith("iterations,")


def test_outputs_are_byte_identical(graph_file, tmp_path, capsys):
    outs = []
    for _ in range(2):
        outs.append(run(capsys, "route", "--graph", str(graph_file), "--query", ADDITION_QUERY)[1])
        outs.append(run(capsys, "search", "--graph", str(graph_file), "--query", ADDITION_QUERY)[1])
    assert outs[0] == outs[2] and outs[1] == outs[3]
    a, b = tmp_path / "x.jsonl", tmp_path / "y.jsonl"
    for path in (a, b):
        run(capsys, "index", str(FIXTURE_DIR), "--repo-name", "demo", "--out", str(path))
    assert a.read_bytes() == b.read_bytes()


def test_usage_errors_exit_1(graph_file, tmp_path, capsys):
    assert main(["search", "--graph", str(graph_file)]) == 1
    assert "usage:" in capsys.readouterr().err
    assert main([]) == 1
    assert main(["query", "--graph", str(graph_file), "--cypher", "MATCH (n) DELETE n"]) == 1
    assert main(["query", "--graph", str(tmp_path / "missing.jsonl"), "--cypher", "MATCH (n) RETURN n"]) == 1
    assert main(["index", str(tmp_path / "nope"), "--repo-name", "r", "--out", str(tmp_path / "o.jsonl")]) == 1
    assert main(["search", "--graph", str(graph_file), "--query", "q", "--k-init", "1", "--k-min", "5"]) == 1
    (tmp_path / "bad.jsonl").write_text("garbage\n")
    assert main(["query", "--graph", str(tmp_path / "bad.jsonl"), "--cypher", "MATCH (n) RETURN n"]) == 1


def test_backend_failure_exits_2(graph_file, capsys):
    code = main(["search", "--graph", str(graph_file), "--query", "q", "--embedder", "http://127.0.0.1:9"])
    assert code == 2
    assert "backend failure" in capsys.readouterr().err


def test_module_entry_point(graph_file):
    proc = subprocess.run(
        [sys.executable, "-m", "repokg", "query", "--graph", str(graph_file), "--cypher", "MATCH (c:Class {name: 'Scientific'}) RETURN c.name AS n"],
        capture_output=True,
        text=True,
        check=False,
    )
    assert proc.returncode == 0, proc.stderr
    assert json.loads(proc.stdout) == {"columns": ["n"], "rows": [["Scientific"]]}
