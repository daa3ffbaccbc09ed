"""
Maximal parental cliques.

A maximal parental clique (MPC) of a node is a clique contained in its parents, which is not a
strict subset of any other such clique. There are three interchangeable backends:

- "paper": grows cliques over every arrangement of the node's parents and children.
- "fast": pivoted maximal clique enumeration over the parent skeleton (the production path).
- "brute": enumerates every subset of parents (a test oracle).

"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations, permutations
import logging
from math import factorial
from typing import Callable, Literal, Mapping

import networkx as nx
import rich.repr

from gmmpc import constants
from gmmpc.graph import Dag, NodeRef

log = logging.getLogger("gmmpc.mpc")

type Backend = Literal["paper", "fast", "brute"]

BACKENDS: tuple[Backend, ...] = ("paper", "fast", "brute")

BRUTE_FORCE_LIMIT = 15
"""Maximum number of parents for the brute force backend."""


class MpcError(Exception):
    """Base class for MPC errors."""


@rich.repr.auto
class ArrangementCapExceeded(MpcError):
    """Too many arrangements for the arrangement ("paper") backend."""

    def __init__(self, node: str, pc_size: int, cap: int) -> None:
        self.node = node
        self.pc_size = pc_size
        self.cap = cap
        super().__init__(
            f"Node {node!r} has {pc_size} parents and children ({factorial(pc_size)} arrangements),"
            f" over the cap of {cap}; use the 'fast' backend"
        )


class ParentLimitExceeded(MpcError):
    """Too many parents for the brute force backend."""


def canonical_order(cliques: set[frozenset[int]]) -> tuple[frozenset[int], ...]:
    """Sort cliques by descending size, then lexicographically by member ids."""
    return tuple(sorted(cliques, key=lambda clique: (-len(clique), sorted(clique))))


@rich.repr.auto
@dataclass(frozen=True)
class MpcSet:
    """The maximal parental cliques of one node, in canonical order."""

    node: int
    cliques: tuple[frozenset[int], ...]

    def __len__(self) -> int:
        return len(self.cliques)

    def names(self, dag: Dag) -> list[list[str]]:
        """Clique members as names (members sorted by id)."""
        return [[dag.nodes[member] for member in sorted(clique)] for clique in self.cliques]

    def to_json(self, dag: Dag) -> dict[str, object]:
        return {"node": dag.nodes[self.node], "mpcs": self.names(dag)}


def find_mpcs_paper(
    dag: Dag, node: NodeRef, arrangement_cap: int | None = None
) -> MpcSet:
    """Find MPCs by growing a clique over every arrangement of the node's PC set.

    For each arrangement, a node X is added when the clique so far is a subset of PC_X, and X
    is a parent of the node. Repeated cliques are dropped.

    Args:
        dag: A DAG.
        node: Node to find MPCs for.
        arrangement_cap: Maximum size of the PC set, or `None` for the default.

    Raises:
        ArrangementCapExceeded: If the PC set is larger than the cap.

    Returns:
        MPCs of the node.
    """
    node_id = dag.node_id(node)
    cap = constants.ARRANGEMENT_CAP if arrangement_cap is None else arrangement_cap
    pc = sorted(dag.pc_set(node_id))
    if len(pc) > cap:
        raise ArrangementCapExceeded(dag.nodes[node_id], len(pc), cap)
    parents = dag.parents(node_id)
    pc_of = {member: dag.pc_set(member) for member in pc}

    cliques: set[frozenset[int]] = set()
    for arrangement in permutations(pc):
        clique: set[int] = set()
        for member in arrangement:
            if member in parents and clique <= pc_of[member]:
                clique.add(member)
        if clique:
            cliques.add(frozenset(clique))
    return MpcSet(node_id, canonical_order(cliques))


def parent_skeleton(dag: Dag, node: NodeRef) -> nx.Graph:
    """The undirected skeleton induced on the parents of a node."""
    parents = sorted(dag.parents(node))
    skeleton = nx.Graph()
    skeleton.add_nodes_from(parents)
    skeleton.add_edges_from(
        (parent1, parent2)
        for parent1, parent2 in combinations(parents, 2)
        if dag.adjacent(parent1, parent2)
    )
    return skeleton


def find_mpcs_fast(dag: Dag, node: NodeRef) -> MpcSet:
    """Find MPCs as the maximal cliques of the parent skeleton.

    Args:
        dag: A DAG.
        node: Node to find MPCs for.

    Returns:
        MPCs of the node.
    """
    node_id = dag.node_id(node)
    skeleton = parent_skeleton(dag, node_id)
    cliques = {frozenset(clique) for clique in nx.find_cliques(skeleton)}
    return MpcSet(node_id, canonical_order(cliques))


def brute_force_mpcs(dag: Dag, node: NodeRef) -> MpcSet:
    """Find MPCs by checking every subset of parents.

    Raises:
        ParentLimitExceeded: If the node has more than 15 parents.
    """
    node_id = dag.node_id(node)
    parents = sorted(dag.parents(node_id))
    if len(parents) > BRUTE_FORCE_LIMIT:
        raise ParentLimitExceeded(
            f"Node {dag.nodes[node_id]!r} has {len(parents)} parents;"
            f" brute force is limited to {BRUTE_FORCE_LIMIT}"
        )
    cliques: list[frozenset[int]] = []
    for size in range(1, len(parents) + 1):
        for subset in combinations(parents, size):
            if all(dag.adjacent(a, b) for a, b in combinations(subset, 2)):
                cliques.append(frozenset(subset))
    maximal = {
        clique
        for clique in cliques
        if not any(clique < other for other in cliques)
    }
    return MpcSet(node_id, canonical_order(maximal))


FINDERS: Mapping[Backend, Callable[[Dag, NodeRef], MpcSet]] = {
    "paper": find_mpcs_paper,
    "fast": find_mpcs_fast,
    "brute": brute_force_mpcs,
}


def find_mpcs(dag: Dag, node: NodeRef, backend: Backend = "fast") -> MpcSet:
    """Find the MPCs of a node with the given backend."""
    try:
        finder = FINDERS[backend]
    except KeyError:
        raise MpcError(f"Unknown backend {backend!r}; expected one of {BACKENDS}")
    return finder(dag, node)


def all_mpcs(dag: Dag, backend: Backend = "fast") -> list[MpcSet]:
    """Find the MPCs of every node, in id order."""
    mpc_sets = [find_mpcs(dag, node_id, backend) for node_id in range(dag.size)]
    log.debug(
        "found MPCs with %s backend; %r",
        backend,
        {dag.nodes[mpcs.node]: len(mpcs) for mpcs in mpc_sets},
    )
    return mpc_sets
