"""
Models with known parameters, for generating synthetic data.
"""

from __future__ import annotations

import logging

import numpy as np

from gmmpc.data import Dataset, NormStats, seeded_rng, zscore_inverse
from gmmpc.evaluation import sample
from gmmpc.graph import Dag, read_builtin_graph
from gmmpc.model import BnModel, Link, ModelKind, build_model

log = logging.getLogger("gmmpc.synthetic")

COLLIDER_PI = (0.3, 0.7)


def collider_model(link: Link = "linear") -> BnModel:
    """A known GMM-MPC model on A -> T <- B, T -> D.

    A and B are standard normal and non-adjacent, so T is a collider with two branches
    ({A} and {B}) mixed with coefficients 0.3 and 0.7.
    """
    bn = build_model(read_builtin_graph("collider4"), "gmm-mpc", link)
    dag = bn.dag
    root_bias = -0.5 if link == "sigmoid" else 0.0
    for name in ("A", "B"):
        (root,) = bn.node_models[dag.node_id(name)].branches
        root.bias = root_bias
        root.variance = 1.0

    collider = bn.node_models[dag.node_id("T")]
    branch_a, branch_b = collider.branches
    assert branch_a.inputs == (dag.node_id("A"),) and branch_b.inputs == (dag.node_id("B"),)
    branch_a.weights = np.array([2.0])
    branch_a.bias = 1.0
    branch_a.variance = 0.25
    branch_b.weights = np.array([-1.5])
    branch_b.bias = -1.0
    branch_b.variance = 0.25
    collider.pi = np.array(COLLIDER_PI)

    (child,) = bn.node_models[dag.node_id("D")].branches
    child.weights = np.array([1.0])
    child.bias = 0.0
    child.variance = 0.5
    return bn


def random_model(
    dag: Dag, kind: ModelKind = "gmm-mpc", link: Link = "linear", seed: int = 0
) -> BnModel:
    """A model with random parameters.

    Weights and biases are standard normal, variances uniform in [0.2, 1], and coefficients
    drawn from a Dirichlet distribution.
    """
    rng = seeded_rng(seed)
    bn = build_model(dag, kind, link)
    for node_model in bn.node_models:
        for branch in node_model.branches:
            branch.weights = rng.standard_normal(len(branch.inputs))
            branch.bias = float(rng.standard_normal())
            branch.variance = float(rng.uniform(0.2, 1.0))
        if node_model.n_branches > 1:
            node_model.pi = rng.dirichlet(np.full(node_model.n_branches, 2.0))
    return bn


def make_standin(
    dag: Dag, rows: int, seed: int = 0, kind: ModelKind = "gmm-mpc"
) -> Dataset:
    """Generate a dataset with the graph's columns, in arbitrary units.

    Samples come from `random_model`, then every column is given a random offset and scale, so
    the data looks like it needs normalizing.
    """
    bn = random_model(dag, kind, seed=seed)
    rng = seeded_rng(seed, 1)
    stats = NormStats(
        dag.nodes,
        rng.uniform(-10.0, 10.0, dag.size),
        rng.uniform(0.5, 5.0, dag.size),
    )
    samples = sample(bn, rows, seed)
    log.debug("generated %s rows for %r", rows, dag)
    return zscore_inverse(samples, stats)
