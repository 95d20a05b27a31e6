import numpy as np
import pytest

from src.model.EnvGraph import (
    EnvGraph, ego_graph, hop_distances, load_graph, load_graph_file, make_grid, parse_env_spec,
)
from src.utils.Exceptions import ConfigError, GraphFormatError, ValidationError


@pytest.mark.parametrize("rows, cols, nodes, edges", [(5, 5, 25, 40), (2, 2, 4, 4), (1, 1, 1, 0), (1, 4, 4, 3)])
def test_grid_sizes(rows, cols, nodes, edges):
    g = make_grid(rows, cols)
    assert g.node_count == nodes
    assert len(g.edges) == edges


def test_grid_degree_sum_is_twice_edges():
    g = make_grid(4, 3)
    assert sum(g.degree(i) for i in range(g.node_count)) == 2 * len(g.edges)
    assert g.max_degree == 4


def test_line_graph_degrees(line_graph):
    assert [line_graph.degree(i) for i in range(3)] == [1, 2, 1]
    assert line_graph.neighbors(1) == (0, 2)
    assert line_graph.is_connected


def test_edges_are_normalized_and_deduplicated():
    g = EnvGraph(3, [(1, 0), (0, 1), (2, 1)])
    assert g.edges == frozenset({(0, 1), (1, 2)})
    assert g.has_edge(1, 0)
    assert not g.has_edge(0, 2)


def test_adjacency_is_symmetric(grid_2x2):
    a = grid_2x2.adjacency()
    np.testing.assert_array_equal(a, a.T)
    assert a.sum() == 2 * len(grid_2x2.edges)
    assert np.all(np.diag(a) == 0)


def test_self_loop_rejected():
    with pytest.raises(ValidationError):
        EnvGraph(2, [(1, 1)])


def test_node_out_of_range_rejected():
    with pytest.raises(ValidationError):
        EnvGraph(2, [(0, 2)])
    with pytest.raises(ValidationError):
        EnvGraph(2, []).neighbors(5)


def test_disconnected_graph_is_allowed():
    g = EnvGraph(4, [(0, 1)])
    assert g.component_count == 3
    assert not g.is_connected
    assert g.neighbors(3) == ()


def test_ego_graph_of_line_center(line_graph):
    e = ego_graph(line_graph, 1)
    assert e.members == (1, 0, 2)
    assert e.neighbors == (0, 2)
    assert e.center_edges == ((1, 0), (1, 2))
    np.testing.assert_array_equal(e.adjacency, [[0, 1, 1], [1, 0, 0], [1, 0, 0]])


def test_ego_graph_keeps_edges_between_neighbors():
    triangle = EnvGraph(3, [(0, 1), (1, 2), (0, 2)])
    e = ego_graph(triangle, 0)
    assert e.adjacency[1, 2] == 1.0
    assert e.center_adjacency()[1, 2] == 0.0
    assert e.center_adjacency()[0, 2] == 1.0


def test_ego_graph_of_isolated_node():
    e = ego_graph(EnvGraph(2, []), 1)
    assert e.members == (1,)
    assert e.size == 1
    assert e.adjacency.shape == (1, 1)


def test_hop_distances(line_graph):
    e = ego_graph(line_graph, 0)
    table = hop_distances(e)
    assert table.distances == {0: 0, 1: 1}
    np.testing.assert_array_equal(table.as_vector(e.members), [0, 1])


def test_hop_distances_with_neighbor_edges_and_isolated_node():
    triangle = EnvGraph(4, [(0, 1), (0, 2), (1, 2), (0, 3)])
    assert hop_distances(ego_graph(triangle, 0)).distances == {0: 0, 1: 1, 2: 1, 3: 1}
    assert hop_distances(ego_graph(EnvGraph(1, []), 0)).distances == {0: 0}


def test_load_graph_with_comments_and_isolated_node():
    g = load_graph("# demo\n0 1\n\n1 2\n3\n")
    assert g.node_count == 4
    assert g.edges == frozenset({(0, 1), (1, 2)})
    assert g.degree(3) == 0


def test_edge_list_round_trip():
    g = EnvGraph(5, [(0, 1), (1, 2), (2, 3)])
    restored = load_graph(g.to_edge_list())
    assert restored.fingerprint() == g.fingerprint()


@pytest.mark.parametrize("text, line", [
    ("0 1\n1 x\n", 2),
    ("0 1\n\n2 2\n", 3),
    ("0 1 2\n", 1),
    ("# c\n-1 0\n", 2),
])
def test_load_graph_reports_line_number(text, line):
    with pytest.raises(GraphFormatError) as info:
        load_graph(text)
    assert info.value.line_number == line


def test_load_graph_rejects_gaps_and_empty():
    with pytest.raises(GraphFormatError):
        load_graph("0 2\n")
    with pytest.raises(GraphFormatError):
        load_graph("# only comments\n")


def test_load_graph_file(tmp_path):
    path = tmp_path / "ring.txt"
    path.write_text("0 1\n1 2\n2 0\n", encoding="utf-8")
    g = load_graph_file(path)
    assert len(g.edges) == 3
    assert parse_env_spec(f"file:{path}").fingerprint() == g.fingerprint()
    with pytest.raises(ConfigError):
        load_graph_file(tmp_path / "missing.txt")


def test_parse_env_spec():
    assert parse_env_spec("grid:3x2").node_count == 6
    for bad in ("grid:3", "ring:4", "grid:axb"):
        with pytest.raises(ConfigError):
            parse_env_spec(bad)
