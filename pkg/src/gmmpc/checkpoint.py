"""
Model checkpoints.

A checkpoint is a JSON document with the graph, the normalization statistics, and the parameters
of every node. Node and input references are by name.

"""

from __future__ import annotations

import json
import logging
import math
from pathlib import Path
from typing import TypedDict

import numpy as np
from typeguard import CollectionCheckStrategy, TypeCheckError, check_type

from gmmpc import atomic
from gmmpc.data import NormStats
from gmmpc.graph import Dag, GraphError, GraphFile, graph_to_dict
from gmmpc.model import BnModel, BranchParams, ModelError, NodeModel
from gmmpc.mpc import find_mpcs

log = logging.getLogger("gmmpc.checkpoint")

FORMAT_VERSION = 1


class NormalizationJson(TypedDict):
    columns: list[str]
    mean: list[float]
    std: list[float]


class BranchJson(TypedDict):
    inputs: list[str]
    """Names of the parents feeding the branch."""
    weights: list[float]
    """One weight per input."""
    bias: float
    variance: float
    pi: float
    """Mixture coefficient of the branch."""


class NodeJson(TypedDict):
    node: str
    kind: str
    link: str
    mpcs: list[list[str]]
    """Maximal parental cliques of the node (informational)."""
    branches: list[BranchJson]


class CheckpointJson(TypedDict):
    format: int
    graph: GraphFile
    normalization: NormalizationJson | None
    nodes: list[NodeJson]


class CheckpointError(Exception):
    """Checkpoint could not be written or read."""


def checkpoint_json(bn: BnModel) -> CheckpointJson:
    """Encode a model as checkpoint JSON."""
    dag = bn.dag
    nodes: list[NodeJson] = []
    for node_model in bn.node_models:
        nodes.append(
            {
                "node": dag.nodes[node_model.node],
                "kind": node_model.kind,
                "link": node_model.link,
                "mpcs": find_mpcs(dag, node_model.node).names(dag),
                "branches": [
                    {
                        "inputs": [dag.nodes[node_id] for node_id in branch.inputs],
                        "weights": [float(weight) for weight in branch.weights],
                        "bias": float(branch.bias),
                        "variance": branch.variance,
                        "pi": float(pi),
                    }
                    for branch, pi in zip(node_model.branches, node_model.pi)
                ],
            }
        )
    normalization = bn.normalization
    return {
        "format": FORMAT_VERSION,
        "graph": graph_to_dict(dag),
        "normalization": None if normalization is None else normalization.to_json(),  # type: ignore[typeddict-item]
        "nodes": nodes,
    }


def model_from_json(checkpoint: object) -> BnModel:
    """Decode checkpoint JSON.

    Raises:
        CheckpointError: If the data is not a valid checkpoint.
    """
    try:
        check_type(
            checkpoint,
            CheckpointJson,
            collection_check_strategy=CollectionCheckStrategy.ALL_ITEMS,
        )
    except TypeCheckError as error:
        raise CheckpointError(f"Checkpoint has an unexpected structure; {error}") from None
    assert isinstance(checkpoint, dict)
    if checkpoint["format"] != FORMAT_VERSION:
        raise CheckpointError(
            f"Unsupported checkpoint format {checkpoint['format']}; expected {FORMAT_VERSION}"
        )

    graph = checkpoint["graph"]
    try:
        dag = Dag.from_names(graph["nodes"], [(parent, child) for parent, child in graph["edges"]])
    except (GraphError, ValueError) as error:
        raise CheckpointError(f"Checkpoint graph is invalid; {error}") from None

    if len(checkpoint["nodes"]) != dag.size:
        raise CheckpointError(
            f"Checkpoint has {len(checkpoint['nodes'])} nodes; graph has {dag.size}"
        )
    node_models: list[NodeModel] = []
    try:
        for node_id, node_json in enumerate(checkpoint["nodes"]):
            if node_json["node"] != dag.nodes[node_id]:
                raise CheckpointError(
                    f"Node #{node_id} should be {dag.nodes[node_id]!r}; found {node_json['node']!r}"
                )
            branches: list[BranchParams] = []
            for branch_json in node_json["branches"]:
                if not branch_json["variance"] > 0:
                    raise CheckpointError(
                        f"Variance of a branch of {node_json['node']!r} must be positive"
                    )
                branches.append(
                    BranchParams(
                        tuple(dag.node_id(name) for name in branch_json["inputs"]),
                        np.array(branch_json["weights"], dtype=np.float64),
                        float(branch_json["bias"]),
                        math.log(branch_json["variance"]),
                    )
                )
            node_models.append(
                NodeModel(
                    node_id,
                    node_json["kind"],  # type: ignore[arg-type]
                    node_json["link"],  # type: ignore[arg-type]
                    branches,
                    np.array([branch["pi"] for branch in node_json["branches"]]),
                )
            )
        normalization = checkpoint["normalization"]
        norm_stats = (
            None
            if normalization is None
            else NormStats(
                tuple(normalization["columns"]),
                np.array(normalization["mean"], dtype=np.float64),
                np.array(normalization["std"], dtype=np.float64),
            )
        )
        return BnModel(dag, node_models, norm_stats)
    except (ModelError, GraphError) as error:
        raise CheckpointError(f"Checkpoint model is invalid; {error}") from None


def save_checkpoint(path: Path | str, bn: BnModel) -> None:
    """Write a model checkpoint.

    Raises:
        CheckpointError: If the file could not be written.
    """
    try:
        atomic.write_json(path, checkpoint_json(bn))
    except atomic.AtomicWriteError as error:
        raise CheckpointError(f"Failed to write checkpoint; {error}") from None
    log.info("saved checkpoint to %s", path)


def load_checkpoint(path: Path | str) -> BnModel:
    """Read a model checkpoint.

    Raises:
        CheckpointError: If the file could not be read, or is invalid.
    """
    path = Path(path)
    try:
        checkpoint = json.loads(path.read_text(encoding="utf-8"))
    except OSError as error:
        raise CheckpointError(f"Failed to read checkpoint {str(path)!r}; {error}") from None
    except json.JSONDecodeError as error:
        raise CheckpointError(f"Checkpoint {str(path)!r} is not valid JSON; {error}") from None
    try:
        return model_from_json(checkpoint)
    except CheckpointError as error:
        raise CheckpointError(f"{path}: {error}") from None
