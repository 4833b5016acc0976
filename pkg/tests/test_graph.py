import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tokenlink import ConfigError, EdgeSplit, Graph, GraphFormatError, NodeIdError, load_edge_list, split_edges
from tokenlink.graph import (
    load_id_map,
    read_negatives,
    read_split,
    write_edge_list,
    write_negatives,
    write_split,
)


def _write(tmp_path, text, name="g.txt"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_two_edge_path(tmp_path):
    g = load_edge_list(_write(tmp_path, "0 1\n1 2"))
    assert g.neighbors(1).tolist() == [0, 2]
    assert g.num_edges == 2


def test_self_loop_dropped_with_one_warning(tmp_path):
    with pytest.warns(UserWarning, match="dropped 1") as rec:
        g = load_edge_list(_write(tmp_path, "0 0\n"))
    assert len(rec) == 1
    assert g.num_edges == 0 and g.num_nodes == 1


def test_duplicate_collapsed(tmp_path):
    with pytest.warns(UserWarning):
        g = load_edge_list(_write(tmp_path, "0 1\n1 0\n"))
    assert g.num_edges == 1
    assert g.has_edge(1, 0)


def test_clean_file_emits_no_warning(tmp_path):
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        load_edge_list(_write(tmp_path, "# comment\n0 1\n\n2 1\n"))


def test_malformed_line_reports_line_number(tmp_path):
    with pytest.raises(GraphFormatError) as exc:
        load_edge_list(_write(tmp_path, "0 1\n1 x\n"))
    assert exc.value.line_number == 2
    with pytest.raises(GraphFormatError) as exc:
        load_edge_list(_write(tmp_path, "0 1\n1 2 3\n"))
    assert exc.value.line_number == 2


def test_node_id_beyond_declared_count(tmp_path):
    with pytest.raises(NodeIdError):
        load_edge_list(_write(tmp_path, "0 1\n1 5\n"), num_nodes=3)
    with pytest.raises(NodeIdError):
        load_edge_list(_write(tmp_path, "0 -1\n"))


def test_directed_input_rejected(tmp_path):
    with pytest.raises(ConfigError):
        load_edge_list(_write(tmp_path, "0 1\n"), undirected=False)


def test_id_map_sidecar(tmp_path):
    ids = _write(tmp_path, "alice 0\nbob 1\ncarol 2\n", "ids.txt")
    g = load_edge_list(_write(tmp_path, "alice bob\nbob carol\n"), id_map=load_id_map(ids))
    assert g.neighbors(1).tolist() == [0, 2]
    with pytest.raises(GraphFormatError):
        load_edge_list(_write(tmp_path, "alice dave\n"), id_map=load_id_map(ids))


def test_neighbors_examples(triangle):
    assert triangle.neighbors(0).tolist() == [1, 2]
    g = Graph.from_edges(3, [(0, 1)])
    assert g.neighbors(2).tolist() == []
    star = Graph.from_edges(6, [(0, i) for i in range(1, 6)])
    assert star.neighbors(0).tolist() == [1, 2, 3, 4, 5]
    with pytest.raises(NodeIdError):
        star.neighbors(6)


edge_lists = st.integers(1, 12).flatmap(
    lambda n: st.tuples(st.just(n), st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=40))
)


@given(edge_lists)
@settings(max_examples=200, deadline=None)
def test_graph_invariants(data):
    n, edges = data
    g = Graph.from_edges(n, edges)
    expected = {frozenset(e) for e in edges if e[0] != e[1]}
    assert g.num_edges == len(expected)
    assert g.degrees.sum() == 2 * g.num_edges
    for v in range(n):
        nb = g.neighbors(v).tolist()
        assert nb == sorted(set(nb))
        assert v not in nb
        assert g.degrees[v] == len(nb)
        for w in nb:
            assert v in g.neighbors(w).tolist()


@given(edge_lists)
@settings(max_examples=50, deadline=None)
def test_round_trip(tmp_path_factory, data):
    n, edges = data
    g = Graph.from_edges(n, edges)
    p = tmp_path_factory.mktemp("rt") / "g.txt"
    write_edge_list(g, p)
    if g.num_edges:
        assert load_edge_list(p, num_nodes=n) == g


def test_graph_is_immutable(triangle):
    with pytest.raises(ValueError):
        triangle.indices[0] = 2


def test_split_sizes_and_determinism():
    g = Graph.from_edges(6, [(0, 1), (0, 2), (0, 3), (0, 4), (0, 5), (1, 2), (1, 3), (1, 4), (2, 3), (3, 4)])
    s = split_edges(g, (0.8, 0.1, 0.1), 7)
    assert (len(s.train), len(s.valid), len(s.test)) == (8, 1, 1)
    t = split_edges(g, (0.8, 0.1, 0.1), 7)
    assert np.array_equal(s.train, t.train) and np.array_equal(s.test, t.test)
    union = {tuple(e) for part in (s.train, s.valid, s.test) for e in part.tolist()}
    assert union == {tuple(e) for e in g.edges().tolist()}
    s.validate(g.num_nodes)
    allt = split_edges(g, (1, 0, 0), 3)
    assert len(allt.train) == 10 and len(allt.valid) == len(allt.test) == 0


@pytest.mark.parametrize("fr", [(0.5, 0.5, 0.5), (0, 0.5, 0.5), (1.2, -0.1, -0.1), (0.5, 0.5)])
def test_split_rejects_bad_fractions(triangle, fr):
    with pytest.raises(ConfigError):
        split_edges(triangle, fr, 0)


def test_split_validation_detects_overlap():
    s = EdgeSplit(train=[(0, 1)], valid=[(1, 0)], test=[])
    with pytest.raises(ConfigError):
        s.validate(3)
    with pytest.raises(NodeIdError):
        EdgeSplit(train=[(0, 9)], valid=[], test=[]).validate(3)


def test_observed_graph_excludes_held_out_edges(k4):
    s = split_edges(k4, (0.5, 0.25, 0.25), 1)
    obs = s.observed_graph(4)
    for u, v in s.test.tolist() + s.valid.tolist():
        assert not obs.has_edge(u, v)
    assert obs.num_edges == len(s.train)
    assert s.observed_graph(4, include_valid=True).num_edges == len(s.train) + len(s.valid)


def test_split_and_negative_files_round_trip(tmp_path, k4):
    s = split_edges(k4, (0.5, 0.25, 0.25), 1)
    write_split(s, tmp_path / "split.txt")
    r = read_split(tmp_path / "split.txt")
    for name in ("train", "valid", "test"):
        assert np.array_equal(getattr(s, name), getattr(r, name))
    negs = {(0, 1): np.array([[0, 2], [1, 3]]), (2, 3): np.array([[2, 0]])}
    write_negatives(negs, tmp_path / "neg.txt")
    back = read_negatives(tmp_path / "neg.txt")
    assert set(back) == set(negs)
    for k in negs:
        assert np.array_equal(back[k], negs[k])


def test_split_file_errors(tmp_path):
    p = _write(tmp_path, "0 1\n", "s.txt")
    with pytest.raises(GraphFormatError):
        read_split(p)
    p = _write(tmp_path, "#bogus\n0 1\n", "s.txt")
    with pytest.raises(GraphFormatError):
        read_split(p)
    p = _write(tmp_path, "0 1 2 3\n", "n.txt")
    with pytest.raises(GraphFormatError):
        read_negatives(p)
