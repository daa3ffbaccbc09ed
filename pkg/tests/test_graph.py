import json

import pytest

from gmmpc.graph import (
    CycleError,
    Dag,
    DuplicateEdge,
    GraphError,
    GraphParseError,
    UnknownNode,
    load_graph,
    open_graph,
    parse_graph,
    read_builtin_graph,
    save_graph,
    serialize_graph,
    to_dot,
)

FIG1B = """\
{
    "nodes": ["X", "Y", "Z", "W", "T"],
    "edges": [["X", "T"], ["Y", "T"], ["Z", "T"], ["W", "T"], ["X", "Y"]]
}
"""


def test_parse_fig1b():
    dag = parse_graph(FIG1B)
    assert dag.nodes == ("X", "Y", "Z", "W", "T")
    assert len(dag.edges) == 5
    assert dag.parents("T") == {0, 1, 2, 3}
    assert dag.children("X") == {1, 4}
    assert dag.pc_set("Y") == {0, 4}


def test_empty_graph():
    dag = parse_graph('{"nodes": [], "edges": []}')
    assert dag.size == 0
    assert dag.topological_order() == []


def test_single_node():
    dag = parse_graph('{"nodes": ["A"], "edges": []}')
    assert dag.parents("A") == frozenset()
    assert dag.children(0) == frozenset()


def test_cycle_rejected():
    with pytest.raises(CycleError):
        parse_graph('{"nodes": ["A", "B"], "edges": [["A", "B"], ["B", "A"]]}')


def test_self_loop_rejected():
    with pytest.raises(CycleError):
        parse_graph('{"nodes": ["A"], "edges": [["A", "A"]]}')


def test_unknown_node_located():
    text = '{\n    "nodes": ["A", "B"],\n    "edges": [["A", "C"]]\n}'
    with pytest.raises(GraphParseError) as exc_info:
        parse_graph(text)
    assert "'C'" in str(exc_info.value)
    assert exc_info.value.line == 3


def test_duplicate_edge():
    text = '{"nodes": ["A", "B"], "edges": [["A", "B"], ["A", "B"]]}'
    with pytest.raises(DuplicateEdge) as exc_info:
        parse_graph(text)
    assert exc_info.value.line == 1


def test_duplicate_edge_points_at_repeat():
    text = (
        '{\n    "nodes": ["A", "B", "C"],\n    "edges": [\n'
        '        ["A", "B"],\n        ["A", "B"],\n        ["A", "C"]\n    ]\n}'
    )
    with pytest.raises(DuplicateEdge) as exc_info:
        parse_graph(text)
    assert (exc_info.value.line, exc_info.value.column) == (5, 9)
    assert exc_info.value.edge_index == 1


def test_cycle_points_at_closing_edge():
    text = (
        '{\n    "nodes": ["A", "B", "C"],\n    "edges": [\n'
        '        ["A", "B"],\n        ["B", "C"],\n        ["C", "A"]\n    ]\n}'
    )
    with pytest.raises(CycleError) as exc_info:
        parse_graph(text)
    assert exc_info.value.line == 6
    assert "line 6" in str(exc_info.value)
    assert set(exc_info.value.cycle) == {("A", "B"), ("B", "C"), ("C", "A")}


def test_cycle_located_with_edges_first():
    text = '{"edges": [["A", "B"], ["B", "A"]], "nodes": ["A", "B"]}'
    with pytest.raises(CycleError) as exc_info:
        parse_graph(text)
    assert (exc_info.value.line, exc_info.value.column) == (1, 24)


def test_self_loop_located():
    with pytest.raises(CycleError) as exc_info:
        parse_graph('{"nodes": ["A"], "edges": [["A", "A"]]}')
    assert (exc_info.value.line, exc_info.value.column) == (1, 28)
    assert exc_info.value.cycle == (("A", "A"),)


def test_invalid_json_has_position():
    with pytest.raises(GraphParseError) as exc_info:
        parse_graph('{"nodes": ["A",]}')
    assert exc_info.value.line == 1
    assert exc_info.value.column is not None


@pytest.mark.parametrize(
    "text",
    [
        '{"nodes": "A", "edges": []}',
        '{"nodes": ["A"]}',
        '{"nodes": ["A", "B"], "edges": [["A"]]}',
        '{"nodes": ["A", "B"], "edges": [["A", "B", "A"]]}',
        '{"nodes": [1, 2], "edges": []}',
    ],
)
def test_bad_structure(text: str):
    with pytest.raises(GraphParseError):
        parse_graph(text)


def test_duplicate_node_names():
    with pytest.raises(GraphParseError):
        parse_graph('{"nodes": ["A", "A"], "edges": []}')


def test_serialize_round_trip():
    dag = parse_graph(FIG1B)
    assert parse_graph(serialize_graph(dag)) == dag


def test_node_lookup():
    dag = parse_graph(FIG1B)
    assert dag.node_id("T") == 4
    assert dag.node_id(2) == 2
    assert dag.name(4) == "T"
    with pytest.raises(UnknownNode):
        dag.node_id("Q")
    with pytest.raises(UnknownNode):
        dag.node_id(5)


def test_topological_order():
    dag = Dag.from_names(["C", "B", "A"], [("A", "B"), ("B", "C")])
    order = dag.topological_order()
    assert order == [2, 1, 0]
    for parent, child in dag.edges:
        assert order.index(parent) < order.index(child)


def test_is_collider():
    dag = parse_graph(FIG1B)
    assert dag.is_collider("T")
    assert not dag.is_collider("Y")
    assert not dag.is_collider("X")
    triangle = Dag.from_names(["A", "B", "C"], [("A", "B"), ("A", "C"), ("B", "C")])
    assert not triangle.is_collider("C")


def test_to_dot():
    dag = Dag.from_names(["A", "B"], [("A", "B")])
    assert to_dot(dag) == 'digraph {\n    "A";\n    "B";\n    "A" -> "B";\n}\n'


def test_save_and_load(tmp_path):
    dag = parse_graph(FIG1B)
    path = tmp_path / "graphs" / "fig1b.json"
    save_graph(path, dag)
    assert load_graph(path) == dag
    assert json.loads(path.read_text())["nodes"] == list(dag.nodes)


def test_load_missing_file(tmp_path):
    with pytest.raises(GraphError):
        load_graph(tmp_path / "missing.json")


def test_builtin_graphs():
    fig1b = read_builtin_graph("fig1b")
    assert fig1b == parse_graph(FIG1B)
    sachs = read_builtin_graph("sachs_consensus")
    assert sachs.size == 11
    assert len(sachs.edges) == 17
    collider = read_builtin_graph("collider4")
    assert collider.is_collider("T")
    with pytest.raises(GraphError):
        read_builtin_graph("no-such-graph")


def test_open_graph(tmp_path):
    assert open_graph("fig1b") == open_graph("fig1b.json")
    path = tmp_path / "graph.json"
    path.write_text('{"nodes": ["A", "B"], "edges": [["B", "A"]]}')
    assert open_graph(str(path)).parents("A") == {1}
