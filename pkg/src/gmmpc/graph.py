"""
Directed acyclic graphs over named nodes.

Nodes are identified by name in files, and by a dense integer id (file order) everywhere else.

"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from importlib.resources import files
import json
import logging
import re
from itertools import combinations, islice
from pathlib import Path
from typing import Iterable, NotRequired, TypedDict

import networkx as nx
import rich.repr
from typeguard import CollectionCheckStrategy, TypeCheckError, check_type

from gmmpc import atomic

log = logging.getLogger("gmmpc.graph")

type NodeRef = int | str
"""A node id, or a node name."""


class GraphFile(TypedDict):
    """Graph file contents."""

    description: NotRequired[str]
    """Free text, e.g. where the graph came from."""
    nodes: list[str]
    """Node names, in id order."""
    edges: list[list[str]]
    """Ordered pairs of (parent, child) names."""


class GraphError(Exception):
    """Base class for graph related errors."""


@rich.repr.auto
class GraphParseError(GraphError):
    """The graph file could not be parsed."""

    def __init__(
        self, message: str, line: int | None = None, column: int | None = None
    ) -> None:
        self.message = message
        self.line = line
        self.column = column
        if line is not None:
            message = f"{message} (line {line}, column {column})"
        super().__init__(message)

    def __rich_repr__(self) -> rich.repr.Result:
        yield self.message
        yield "line", self.line, None
        yield "column", self.column, None


class CycleError(GraphParseError):
    """The edges contain a directed cycle."""

    def __init__(
        self,
        message: str,
        line: int | None = None,
        column: int | None = None,
        cycle: tuple[tuple[str, str], ...] = (),
    ) -> None:
        self.cycle = cycle
        """Edges of the cycle, as (parent, child) names."""
        super().__init__(message, line=line, column=column)


class DuplicateEdge(GraphParseError):
    """The same edge was given more than once."""

    def __init__(
        self,
        message: str,
        line: int | None = None,
        column: int | None = None,
        edge_index: int | None = None,
    ) -> None:
        self.edge_index = edge_index
        """Position of the repeated edge in the edge list."""
        super().__init__(message, line=line, column=column)


@rich.repr.auto
class UnknownNode(GraphError):
    """A node name or id is not in the graph."""

    def __init__(self, node: NodeRef) -> None:
        self.node = node
        super().__init__(f"Unknown node {node!r}")

    def __rich_repr__(self) -> rich.repr.Result:
        yield self.node


_EDGE_PAIR = re.compile(r'\[\s*"(?:[^"\\]|\\.)*"\s*,\s*"(?:[^"\\]|\\.)*"\s*\]')
_EDGES_KEY = re.compile(r'"edges"\s*:\s*\[')


def _position(text: str, offset: int) -> tuple[int, int]:
    line = text.count("\n", 0, offset) + 1
    column = offset - (text.rfind("\n", 0, offset) + 1) + 1
    return line, column


def _locate(text: str, needle: str) -> tuple[int | None, int | None]:
    """Find the line and column of the first occurrence of `needle`."""
    offset = text.find(needle)
    if offset == -1:
        return None, None
    return _position(text, offset)


def _locate_edge(text: str, edge_index: int) -> tuple[int | None, int | None]:
    """Find the line and column of an edge, given its position in the edge list.

    Only valid once every edge is known to be a pair of names.
    """
    edges_key = _EDGES_KEY.search(text)
    if edges_key is None:
        return None, None
    pairs = _EDGE_PAIR.finditer(text, edges_key.end())
    match = next(islice(pairs, edge_index, None), None)
    if match is None:
        return None, None
    return _position(text, match.start())


@rich.repr.auto
@dataclass(frozen=True, eq=True)
class Dag:
    """An immutable directed acyclic graph.

    Args:
        nodes: Node names, where the index is the node id.
        edges: Ordered pairs of (parent id, child id).
    """

    nodes: tuple[str, ...]
    edges: frozenset[tuple[int, int]]

    def __post_init__(self) -> None:
        if len(set(self.nodes)) != len(self.nodes):
            raise GraphError("Node names must be unique")
        node_count = len(self.nodes)
        for parent, child in self.edges:
            if not (0 <= parent < node_count and 0 <= child < node_count):
                raise UnknownNode(parent if not 0 <= parent < node_count else child)
            if parent == child:
                name = self.nodes[parent]
                raise CycleError(f"Self-loop on node {name!r}", cycle=((name, name),))
        try:
            cycle = nx.find_cycle(self.digraph)
        except nx.NetworkXNoCycle:
            return
        names = " -> ".join(self.nodes[parent] for parent, _child in cycle)
        raise CycleError(
            f"Graph contains a cycle; {names} -> {self.nodes[cycle[0][0]]}",
            cycle=tuple((self.nodes[parent], self.nodes[child]) for parent, child in cycle),
        )

    def __rich_repr__(self) -> rich.repr.Result:
        yield list(self.nodes)
        yield "edges", len(self.edges)

    @classmethod
    def from_names(
        cls, nodes: Iterable[str], edges: Iterable[tuple[str, str]]
    ) -> Dag:
        """Build a DAG from node names and (parent, child) name pairs.

        Args:
            nodes: Node names in id order.
            edges: Pairs of parent and child names.

        Raises:
            UnknownNode: If an edge refers to a node not in `nodes`.
            DuplicateEdge: If an edge is repeated.
            CycleError: If the edges form a cycle.

        Returns:
            A new DAG.
        """
        node_names = tuple(nodes)
        index = {name: node_id for node_id, name in enumerate(node_names)}
        edge_ids: set[tuple[int, int]] = set()
        for edge_index, (parent, child) in enumerate(edges):
            for name in (parent, child):
                if name not in index:
                    raise UnknownNode(name)
            edge = (index[parent], index[child])
            if edge in edge_ids:
                raise DuplicateEdge(
                    f"Duplicate edge {parent!r} -> {child!r}",
                    edge_index=edge_index,
                )
            edge_ids.add(edge)
        return cls(node_names, frozenset(edge_ids))

    @cached_property
    def digraph(self) -> nx.DiGraph:
        """The graph as a networkx DiGraph over node ids."""
        graph = nx.DiGraph()
        graph.add_nodes_from(range(len(self.nodes)))
        graph.add_edges_from(sorted(self.edges))
        return graph

    @cached_property
    def _index(self) -> dict[str, int]:
        return {name: node_id for node_id, name in enumerate(self.nodes)}

    @cached_property
    def _parents(self) -> tuple[frozenset[int], ...]:
        parents: list[set[int]] = [set() for _ in self.nodes]
        for parent, child in self.edges:
            parents[child].add(parent)
        return tuple(frozenset(node_parents) for node_parents in parents)

    @cached_property
    def _children(self) -> tuple[frozenset[int], ...]:
        children: list[set[int]] = [set() for _ in self.nodes]
        for parent, child in self.edges:
            children[parent].add(child)
        return tuple(frozenset(node_children) for node_children in children)

    @property
    def size(self) -> int:
        """Number of nodes."""
        return len(self.nodes)

    def node_id(self, node: NodeRef) -> int:
        """Resolve a node name or id to an id.

        Raises:
            UnknownNode: If the node doesn't exist.
        """
        if isinstance(node, str):
            try:
                return self._index[node]
            except KeyError:
                raise UnknownNode(node) from None
        if not 0 <= node < len(self.nodes):
            raise UnknownNode(node)
        return node

    def name(self, node: NodeRef) -> str:
        return self.nodes[self.node_id(node)]

    def parents(self, node: NodeRef) -> frozenset[int]:
        """Get the ids with an edge into `node`."""
        return self._parents[self.node_id(node)]

    def children(self, node: NodeRef) -> frozenset[int]:
        """Get the ids with an edge out of `node`."""
        return self._children[self.node_id(node)]

    def pc_set(self, node: NodeRef) -> frozenset[int]:
        """Parents and children of a node."""
        node_id = self.node_id(node)
        return self._parents[node_id] | self._children[node_id]

    def adjacent(self, node1: int, node2: int) -> bool:
        """Check for an edge between two nodes, in either direction."""
        return (node1, node2) in self.edges or (node2, node1) in self.edges

    def is_collider(self, node: NodeRef) -> bool:
        """Check if a node is the collider of an immorality.

        That is, the node has two parents with no edge between them.
        """
        parents = sorted(self.parents(node))
        return any(
            not self.adjacent(parent1, parent2)
            for parent1, parent2 in combinations(parents, 2)
        )

    def topological_order(self) -> list[int]:
        """Get node ids so that every edge points forward, breaking ties by id."""
        return list(nx.lexicographical_topological_sort(self.digraph))


def parse_graph(text: str) -> Dag:
    """Parse a JSON graph file.

    Args:
        text: Contents of a graph file.

    Raises:
        GraphParseError: If the file is malformed, or doesn't describe a DAG.

    Returns:
        A DAG with nodes in file order.
    """
    try:
        graph_json = json.loads(text)
    except json.JSONDecodeError as error:
        raise GraphParseError(
            f"Invalid JSON; {error.msg}", line=error.lineno, column=error.colno
        ) from None
    try:
        check_type(
            graph_json,
            GraphFile,
            collection_check_strategy=CollectionCheckStrategy.ALL_ITEMS,
        )
    except TypeCheckError as error:
        raise GraphParseError(f"Graph file has an unexpected structure; {error}")

    edges: list[tuple[str, str]] = []
    for edge_index, edge in enumerate(graph_json["edges"]):
        if len(edge) != 2:
            line, column = _locate(text, json.dumps(edge))
            raise GraphParseError(
                f"Edge #{edge_index} should be a [parent, child] pair; found {edge!r}",
                line=line,
                column=column,
            )
        edges.append((edge[0], edge[1]))

    try:
        dag = Dag.from_names(graph_json["nodes"], edges)
    except UnknownNode as error:
        line, column = _locate(text, f'"{error.node}"')
        raise GraphParseError(
            f"Edge refers to unknown node {error.node!r}", line=line, column=column
        ) from None
    except DuplicateEdge as error:
        assert error.edge_index is not None
        line, column = _locate_edge(text, error.edge_index)
        raise DuplicateEdge(
            error.message, line=line, column=column, edge_index=error.edge_index
        ) from None
    except CycleError as error:
        # Point at the cycle edge that comes last in the file.
        closing = max(edges.index(edge) for edge in error.cycle)
        line, column = _locate_edge(text, closing)
        raise CycleError(
            error.message, line=line, column=column, cycle=error.cycle
        ) from None
    except GraphParseError:
        raise
    except GraphError as error:
        raise GraphParseError(str(error)) from None
    log.debug("parsed graph %r", dag)
    return dag


def graph_to_dict(dag: Dag) -> GraphFile:
    return {
        "nodes": list(dag.nodes),
        "edges": [
            [dag.nodes[parent], dag.nodes[child]] for parent, child in sorted(dag.edges)
        ],
    }


def serialize_graph(dag: Dag) -> str:
    """Encode a DAG in the graph file format (inverse of `parse_graph`)."""
    return json.dumps(graph_to_dict(dag), indent=4)


def to_dot(dag: Dag) -> str:
    """Export a DAG in DOT format, for visualization."""
    lines = ["digraph {"]
    for name in dag.nodes:
        lines.append(f"    {json.dumps(name)};")
    for parent, child in sorted(dag.edges):
        lines.append(
            f"    {json.dumps(dag.nodes[parent])} -> {json.dumps(dag.nodes[child])};"
        )
    lines.append("}")
    return "\n".join(lines) + "\n"


def load_graph(path: Path | str) -> Dag:
    """Load a graph file.

    Args:
        path: Path to JSON graph file.

    Raises:
        GraphError: If the file couldn't be read or parsed.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as error:
        raise GraphError(f"Failed to read graph {str(path)!r}; {error}") from None
    try:
        return parse_graph(text)
    except GraphParseError as error:
        raise type(error)(
            f"{path}: {error.message}", line=error.line, column=error.column
        ) from None


def save_graph(path: Path | str, dag: Dag) -> None:
    atomic.write(path, serialize_graph(dag) + "\n")


def read_builtin_graph(name: str) -> Dag:
    """Read one of the graphs shipped with the package.

    Args:
        name: Graph name, e.g. "fig1b" or "sachs_consensus".

    Raises:
        GraphError: If there is no such graph.
    """
    try:
        text = files("gmmpc.graphs").joinpath(f"{name}.json").read_text("utf-8")
    except (OSError, FileNotFoundError) as error:
        raise GraphError(f"No builtin graph called {name!r}; {error}") from None
    return parse_graph(text)


def open_graph(reference: str) -> Dag:
    """Load a graph from a path, falling back to a builtin graph of that name.

    A bare name such as "fig1b" or "fig1b.json" that is not an existing file refers to a
    builtin graph.

    Raises:
        GraphError: If neither exists, or the graph is invalid.
    """
    path = Path(reference)
    if path.exists() or len(path.parts) > 1:
        return load_graph(path)
    name = path.stem if path.suffix == ".json" else reference
    return read_builtin_graph(name)
