from __future__ import annotations

import json

import pytest

from sparse_game.graph import (
    Graph, build_chain, build_lattice, build_tree, degrees, nkh_table, spiral_points,
)


def test_cycle_neighbors():
    g = build_chain(5)
    assert g.in_neighbors[0] == (1, 4)
    assert g.is_undirected()


def test_cycle_counts():
    t = nkh_table(build_chain(7), 0)
    assert t.count(2, 1) == 1
    assert t.count(0, 1) == 2
    assert t.h_star == 4


def test_open_chain():
    g = build_chain(4, cyclic=False)
    assert g.in_neighbors == ((1,), (0, 2), (1, 3), (2,))


def test_lattice_undirected_counts():
    g = build_lattice(2)
    t = nkh_table(g, 0)
    assert t.count(g.index_of((1, 1)), 1) == 2
    assert t.count(g.index_of((2, 0)), 1) == 1
    g3 = build_lattice(3)
    t3 = nkh_table(g3, 0)
    k = g3.index_of((1, 0))
    assert t3.count(k, 0) == 1
    assert t3.count(k, 2) == 3


def test_spiral_order():
    pts = spiral_points(2)
    assert pts[:5] == [(0, 0), (1, 0), (0, 1), (-1, 0), (0, -1)]
    assert len(pts) == 13 and len(set(pts)) == 13
    assert all(abs(x) + abs(y) <= 2 for x, y in pts)


def test_outward_lattice_root_not_read():
    g = build_lattice(3, "outward")
    _, n_out = degrees(g)
    assert n_out[0] == 0
    assert set(g.in_neighbors[0]) == {g.index_of(p) for p in [(1, 0), (-1, 0), (0, 1), (0, -1)]}
    # off-axis vertices read outward only
    assert set(g.in_neighbors[g.index_of((1, 1))]) == {g.index_of((2, 1)), g.index_of((1, 2))}


@pytest.mark.parametrize("h", [1, 2, 3])
def test_perturbed_lattice_detour(h):
    g = build_lattice(h + 2, "perturbed", h=h)
    t = nkh_table(g, 0)
    a, b, o = g.index_of((-1, 1)), g.index_of((-1, 0)), g.index_of((0, 0))
    assert t.layer_of[a] == 2 * h
    assert b in g.in_neighbors[a] and b in g.in_neighbors[o]


def test_tree():
    g = build_tree(2, 2)
    assert g.n == 7
    assert g.is_undirected()
    assert nkh_table(g, 0).h_star == 3


def test_json_roundtrip(tmp_path):
    from sparse_game.graph import dump_graph, load_graph
    g = build_lattice(2, "outward")
    p = tmp_path / "g.json"
    dump_graph(g, p)
    assert load_graph(p) == g
    assert json.loads(p.read_text())["n"] == 13


@pytest.mark.parametrize("lists", [[[0]], [[1, 1], [0]], [[5]]])
def test_invalid_graphs(lists):
    with pytest.raises(ValueError):
        Graph.from_lists(lists)


def test_sup_count_out_of_range():
    t = nkh_table(build_chain(5), 0)
    assert t.sup_count(10, 10) == 0
    assert t.sup_count(1, 0) == 1
