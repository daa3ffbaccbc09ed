"""
Node distributions for Gaussian Bayesian networks.

Each node is a mixture of Gaussians, where each branch has a mean that is a (linear, or
sigmoid) function of a subset of the node's parents. Three families share this representation:

- "lg": linear Gaussian, one branch over all parents.
- "gmm": ordinary GMM, a fixed number of branches each over all parents.
- "gmm-mpc": one branch per maximal parental clique.

Variances are stored as their logarithm, so any unconstrained update keeps them positive.

"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
import logging
import math
from typing import Literal, Sequence

import numpy as np
import rich.repr
from scipy.special import expit, logsumexp

from gmmpc.data import Dataset, FloatArray, NormStats
from gmmpc.graph import Dag
from gmmpc.mpc import Backend, find_mpcs

log = logging.getLogger("gmmpc.model")

type Link = Literal["linear", "sigmoid"]
type ModelKind = Literal["lg", "gmm", "gmm-mpc"]

LINKS: tuple[Link, ...] = ("linear", "sigmoid")
KINDS: tuple[ModelKind, ...] = ("lg", "gmm", "gmm-mpc")

LOG_2PI = math.log(2 * math.pi)
VARIANCE_FLOOR = 1e-6
LOG_VARIANCE_FLOOR = math.log(VARIANCE_FLOOR)
DEFAULT_EPSILON = 1e-8
DEFAULT_GMM_BRANCHES = 3


class ModelError(Exception):
    """Base class for model errors."""


class DimensionMismatch(ModelError):
    """Parent values don't match the branch inputs."""


class NonFiniteValue(ModelError):
    """An input or parameter is NaN or infinite."""


class InvalidModel(ModelError):
    """Model structure or parameters break an invariant."""


@rich.repr.auto
@dataclass
class BranchParams:
    """Parameters of one Gaussian branch.

    The branch mean is `w . p + b` (linear link) or `sigmoid(w . p) + b` (sigmoid link), where `p`
    are the values of the `inputs` nodes.
    """

    inputs: tuple[int, ...]
    weights: FloatArray = field(default_factory=lambda: np.zeros(0))
    bias: float = 0.0
    log_var: float = 0.0

    def __post_init__(self) -> None:
        self.inputs = tuple(self.inputs)
        weights = np.asarray(self.weights, dtype=np.float64)
        if weights.shape == (0,) and self.inputs:
            weights = np.zeros(len(self.inputs))
        if weights.shape != (len(self.inputs),):
            raise DimensionMismatch(
                f"Expected {len(self.inputs)} weights; found shape {weights.shape}"
            )
        self.weights = weights

    def __rich_repr__(self) -> rich.repr.Result:
        yield "inputs", self.inputs
        yield "weights", self.weights.tolist()
        yield "bias", self.bias
        yield "variance", self.variance

    @property
    def variance(self) -> float:
        return math.exp(self.log_var)

    @variance.setter
    def variance(self, variance: float) -> None:
        self.log_var = math.log(max(variance, VARIANCE_FLOOR))

    def means(self, inputs: FloatArray, link: Link) -> FloatArray:
        """Branch means for a matrix of input rows (N x len(inputs))."""
        z = inputs @ self.weights
        if link == "sigmoid":
            return expit(z) + self.bias
        return z + self.bias


def _check_parent_values(params: BranchParams, parent_values: Sequence[float]) -> FloatArray:
    values = np.asarray(parent_values, dtype=np.float64).reshape(-1)
    if values.shape != (len(params.inputs),):
        raise DimensionMismatch(
            f"Branch has {len(params.inputs)} inputs; found {values.shape[0]} parent values"
        )
    if not np.all(np.isfinite(values)):
        raise NonFiniteValue(f"Parent values must be finite; found {values.tolist()}")
    return values


def gaussian_logpdf(x: FloatArray | float, mean: FloatArray | float, log_var: float):
    """Log density of a univariate normal, parameterized by log variance."""
    return -0.5 * (LOG_2PI + log_var) - (x - mean) ** 2 / (2.0 * math.exp(log_var))


def branch_mean(params: BranchParams, parent_values: Sequence[float], link: Link) -> float:
    """Mean of a branch given the values of its inputs.

    Raises:
        DimensionMismatch: If the number of values doesn't match the inputs.
    """
    values = _check_parent_values(params, parent_values)
    return float(params.means(values[np.newaxis, :], link)[0])


def branch_logpdf(
    params: BranchParams, parent_values: Sequence[float], x: float, link: Link
) -> float:
    """Log density of `x` under a branch.

    Raises:
        DimensionMismatch: If the number of values doesn't match the inputs.
        NonFiniteValue: If any input is not finite.
    """
    if not math.isfinite(x):
        raise NonFiniteValue(f"Value must be finite; found {x!r}")
    mean = branch_mean(params, parent_values, link)
    return float(gaussian_logpdf(x, mean, params.log_var))


def _log_pi(pi: FloatArray) -> FloatArray:
    with np.errstate(divide="ignore"):
        return np.log(pi)


def _mixture_log(weighted: FloatArray, epsilon: float) -> FloatArray:
    """ln(sum_k exp(weighted_k) + epsilon) along the last axis, without overflow."""
    log_mixture = logsumexp(weighted, axis=-1)
    if epsilon > 0:
        log_mixture = np.logaddexp(log_mixture, math.log(epsilon))
    return log_mixture


@rich.repr.auto
@dataclass
class NodeModel:
    """The conditional distribution of one node given its parents."""

    node: int
    kind: ModelKind
    link: Link
    branches: list[BranchParams]
    pi: FloatArray

    def __post_init__(self) -> None:
        self.pi = np.asarray(self.pi, dtype=np.float64)
        if self.kind not in KINDS:
            raise InvalidModel(
                f"Node {self.node} has unknown kind {self.kind!r}; expected one of {KINDS}"
            )
        if self.link not in LINKS:
            raise InvalidModel(
                f"Node {self.node} has unknown link {self.link!r}; expected one of {LINKS}"
            )
        if not self.branches:
            raise InvalidModel(f"Node {self.node} has no branches")
        if self.pi.shape != (len(self.branches),):
            raise InvalidModel(
                f"Node {self.node} has {len(self.branches)} branches but {self.pi.shape[0]} coefficients"
            )
        if np.any(self.pi < 0) or abs(self.pi.sum() - 1.0) > 1e-9:
            raise InvalidModel(
                f"Coefficients of node {self.node} should be on the simplex; found {self.pi.tolist()}"
            )

    def __rich_repr__(self) -> rich.repr.Result:
        yield self.node
        yield "kind", self.kind
        yield "link", self.link
        yield "pi", self.pi.tolist()
        yield "branches", self.branches

    @property
    def n_branches(self) -> int:
        return len(self.branches)

    def means(self, matrix: FloatArray) -> FloatArray:
        """Branch means for every row of a data matrix in node order (N x K)."""
        return np.column_stack(
            [branch.means(matrix[:, list(branch.inputs)], self.link) for branch in self.branches]
        )

    def log_densities(self, matrix: FloatArray) -> FloatArray:
        """Log density of each branch at every row (N x K)."""
        x = matrix[:, self.node]
        return np.column_stack(
            [
                gaussian_logpdf(
                    x,
                    branch.means(matrix[:, list(branch.inputs)], self.link),
                    branch.log_var,
                )
                for branch in self.branches
            ]
        )

    def weighted_log_densities(self, matrix: FloatArray) -> FloatArray:
        """ln(pi_k) + ln N_k for every row (N x K)."""
        return _log_pi(self.pi) + self.log_densities(matrix)

    def loglik(self, matrix: FloatArray, epsilon: float = 0.0) -> FloatArray:
        """Mixture log likelihood of every row (N,)."""
        return _mixture_log(self.weighted_log_densities(matrix), epsilon)

    def responsibilities(self, matrix: FloatArray, epsilon: float = 0.0) -> FloatArray:
        """Posterior branch membership of every row (N x K)."""
        weighted = self.weighted_log_densities(matrix)
        return np.exp(weighted - _mixture_log(weighted, epsilon)[:, np.newaxis])

    def expected_value(self, matrix: FloatArray) -> FloatArray:
        """Mixture mean of the node for every row (N,)."""
        return self.means(matrix) @ self.pi


def _branch_log_terms(
    model: NodeModel, parent_values: Sequence[Sequence[float]], x: float
) -> FloatArray:
    if len(parent_values) != model.n_branches:
        raise DimensionMismatch(
            f"Node has {model.n_branches} branches; found parent values for {len(parent_values)}"
        )
    log_densities = np.array(
        [
            branch_logpdf(branch, values, x, model.link)
            for branch, values in zip(model.branches, parent_values)
        ]
    )
    return _log_pi(model.pi) + log_densities


def node_mixture_logpdf(
    model: NodeModel,
    parent_values: Sequence[Sequence[float]],
    x: float,
    epsilon: float = 0.0,
) -> float:
    """ln(sum_k pi_k N_k(x) + epsilon) for one instance.

    Args:
        model: Node model.
        parent_values: For each branch, the values of its inputs.
        x: Value of the node.
        epsilon: Stabilizing constant added inside the logarithm.
    """
    return float(_mixture_log(_branch_log_terms(model, parent_values, x), epsilon))


def responsibilities(
    model: NodeModel,
    parent_values: Sequence[Sequence[float]],
    x: float,
    epsilon: float = 0.0,
) -> FloatArray:
    """pi_k N_k / (sum_k pi_k N_k + epsilon) for one instance."""
    weighted = _branch_log_terms(model, parent_values, x)
    return np.exp(weighted - _mixture_log(weighted, epsilon))


@rich.repr.auto
@dataclass
class BnModel:
    """A Bayesian network with one node model per node."""

    dag: Dag
    node_models: list[NodeModel]
    normalization: NormStats | None = None

    def __post_init__(self) -> None:
        if len(self.node_models) != self.dag.size:
            raise InvalidModel(
                f"Expected {self.dag.size} node models; found {len(self.node_models)}"
            )
        for node_id, node_model in enumerate(self.node_models):
            if node_model.node != node_id:
                raise InvalidModel(f"Node model {node_id} is for node {node_model.node}")
            parents = self.dag.parents(node_id)
            for branch in node_model.branches:
                if not set(branch.inputs) <= parents:
                    raise InvalidModel(
                        f"Branch inputs of {self.dag.nodes[node_id]!r} must be parents"
                    )

    def __rich_repr__(self) -> rich.repr.Result:
        yield self.dag
        yield "kinds", sorted({model.kind for model in self.node_models})

    def copy(self) -> BnModel:
        return copy.deepcopy(self)

    def matrix(self, data: Dataset) -> FloatArray:
        """Data values with columns in node order.

        Raises:
            MissingColumn: If a node has no column.
        """
        return data.align(self.dag.nodes).values

    def loglik(self, matrix: FloatArray, epsilon: float = 0.0) -> FloatArray:
        """Joint log likelihood of every row (sum over nodes)."""
        total = np.zeros(matrix.shape[0])
        for node_model in self.node_models:
            total += node_model.loglik(matrix, epsilon)
        return total


def build_model(
    dag: Dag,
    kind: ModelKind = "gmm-mpc",
    link: Link = "linear",
    gmm_branch_count: int = DEFAULT_GMM_BRANCHES,
    *,
    bias_spread: float = 0.0,
    mpc_backend: Backend = "fast",
) -> BnModel:
    """Build a model with initial parameters w=0, b=0, variance=1 and uniform coefficients.

    Nodes without parents always have a single branch with no inputs.

    Args:
        dag: Graph.
        kind: Model family.
        link: Mean link function.
        gmm_branch_count: Number of branches per node for the "gmm" family.
        bias_spread: Spread initial biases of multi-branch nodes evenly over
            [-bias_spread, bias_spread]. Branches with identical inputs need this to differ.
        mpc_backend: Backend used to find MPCs for the "gmm-mpc" family.

    Raises:
        ModelError: For an invalid kind, link or branch count.
    """
    if kind not in KINDS:
        raise ModelError(f"Unknown model kind {kind!r}; expected one of {KINDS}")
    if link not in LINKS:
        raise ModelError(f"Unknown link {link!r}; expected one of {LINKS}")
    if gmm_branch_count < 1:
        raise ModelError(f"Branch count must be at least 1; found {gmm_branch_count}")

    node_models: list[NodeModel] = []
    for node_id in range(dag.size):
        parents = tuple(sorted(dag.parents(node_id)))
        if not parents:
            inputs = [()]
        elif kind == "lg":
            inputs = [parents]
        elif kind == "gmm":
            inputs = [parents] * gmm_branch_count
        else:
            mpcs = find_mpcs(dag, node_id, mpc_backend)
            inputs = [tuple(sorted(clique)) for clique in mpcs.cliques]

        branch_count = len(inputs)
        biases = (
            np.linspace(-bias_spread, bias_spread, branch_count)
            if branch_count > 1
            else np.zeros(1)
        )
        branches = [
            BranchParams(branch_inputs, np.zeros(len(branch_inputs)), float(bias), 0.0)
            for branch_inputs, bias in zip(inputs, biases)
        ]
        node_models.append(
            NodeModel(
                node_id,
                kind,
                link,
                branches,
                np.full(branch_count, 1.0 / branch_count),
            )
        )
    bn = BnModel(dag, node_models)
    log.debug(
        "built %s model; branches=%r",
        kind,
        {dag.nodes[model.node]: model.n_branches for model in node_models},
    )
    return bn


def total_loss(bn: BnModel, data: Dataset, epsilon: float = DEFAULT_EPSILON) -> float:
    """Negative log likelihood of a dataset, summed over instances and nodes.

    Raises:
        MissingColumn: If a node has no column in `data`.
    """
    matrix = bn.matrix(data)
    if not matrix.shape[0]:
        return 0.0
    return float(-bn.loglik(matrix, epsilon).sum())
