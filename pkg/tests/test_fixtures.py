from __future__ import annotations

from collections import Counter

import pytest

from conftest import FIXTURE_DIR
from graph_gen import illegal_state
from repokg.fixtures import TWO_FILE_NAMES, nonce_of, planted_qrels, random_graph, two_file_fixture
from repokg.parser import scan_repository


def test_packaged_fixture_matches_repo_copy(tmp_path):
    packaged = two_file_fixture()
    copied = two_file_fixture(tmp_path / "copy")
    for name in TWO_FILE_NAMES:
        expected = (FIXTURE_DIR / name).read_bytes()
        assert (packaged / name).read_bytes() == expected
        assert (copied / name).read_bytes() == expected


def test_fixture_inventory():
    keys = {e.key for unit in scan_repository(FIXTURE_DIR) for e in unit.entities}
    assert keys >= {
        "Class:base.Calculator",
        "Method:base.Calculator.add",
        "Method:base.Calculator.multiply",
        "Function:base.format_result",
        "GlobalVariable:base.precision",
        "Class:extended.Scientific",
        "Method:extended.Scientific.divide",
        "Function:extended.quick_add",
        "Function:extended.demo",
    }


def test_empty_random_graph_is_repo_only():
    g = random_graph(seed=1, n_nodes=0)
    assert [n.kind for n in g.nodes.values()] == ["Repo"]
    assert g.edge_count() == 0


@pytest.mark.parametrize("seed", range(10))
def test_random_graphs_are_legal_and_deterministic(seed):
    g = random_graph(seed, 5 + seed * 13, edge_density=0.1 * (seed % 4))
    assert g.serialize() == random_graph(seed, 5 + seed * 13, edge_density=0.1 * (seed % 4)).serialize()
    assert illegal_state(g) is None
    assert len(g) == 1 + 5 + seed * 13
    assert all((n.embedding is None) == (n.kind == "Repo") for n in g.nodes.values())


def test_nonces_are_unique():
    g = random_graph(4, 200, 0.2)
    nonces = Counter(nonce_of(g, n) for n in g.nodes if g.node(n).kind != "Repo")
    assert max(nonces.values()) == 1
    assert all(word.isalpha() for word in nonces)


def test_planted_qrels_point_at_the_nonce_owner():
    g = random_graph(2, 80)
    qrels = planted_qrels(g, 15, seed=2)
    assert len(qrels) == 15
    by_item = {n.item_id: nid for nid, n in g.nodes.items()}
    for q in qrels.queries:
        (item,) = q.relevant
        nonce = q.query.split()[-1]
        owners = [n for n in g.nodes if n in by_item.values() and g.node(n).props.get("description", "").endswith(nonce)]
        assert owners == [by_item[item]]
    assert planted_qrels(g, 15, seed=2) == qrels
