"""
Evaluation metrics, early stopping, and sampling.
"""

from __future__ import annotations

from dataclasses import dataclass
import logging
import math
from typing import Sequence

import numpy as np
import rich.repr

from gmmpc.data import Dataset, FloatArray, seeded_rng, zscore_inverse
from gmmpc.graph import NodeRef
from gmmpc.model import BnModel

log = logging.getLogger("gmmpc.evaluation")

BIC_TOLERANCE = 1e-9


class EvaluationError(Exception):
    """Base class for evaluation errors."""


class EmptyTestSet(EvaluationError):
    """There is nothing to evaluate on."""


@rich.repr.auto
@dataclass(frozen=True)
class EvalResult:
    """Metrics of a model on a test set."""

    avg_minus_loglik: float
    bic: float
    param_count: int
    n_test: int

    def __post_init__(self) -> None:
        expected = bic(self.avg_minus_loglik, self.param_count, self.n_test)
        if abs(self.bic - expected) > BIC_TOLERANCE * max(1.0, abs(expected)):
            raise EvaluationError(f"BIC {self.bic} is inconsistent; expected {expected}")

    def to_json(self) -> dict[str, float | int]:
        return {
            "avg_minus_loglik": self.avg_minus_loglik,
            "bic": self.bic,
            "param_count": self.param_count,
            "n_test": self.n_test,
        }


def avg_minus_loglik(bn: BnModel, test: Dataset, epsilon: float = 0.0) -> float:
    """Average minus log likelihood per instance.

    Raises:
        EmptyTestSet: If `test` has no rows.
        MissingColumn: If a node has no column in `test`.
    """
    matrix = bn.matrix(test)
    if not matrix.shape[0]:
        raise EmptyTestSet("Can't evaluate on an empty test set")
    return float(-bn.loglik(matrix, epsilon).sum() / matrix.shape[0])


def param_count(bn: BnModel) -> int:
    """Count free parameters.

    Every branch has its weights, a bias and a variance. A node with K branches adds K-1 free
    mixture coefficients (they sum to one).
    """
    return sum(
        sum(len(branch.inputs) + 2 for branch in node_model.branches)
        + node_model.n_branches
        - 1
        for node_model in bn.node_models
    )


def bic(avg_minus_loglik: float, param_count: int, n_test: int) -> float:
    """Bayesian information criterion, from the average minus log likelihood."""
    if n_test < 1:
        raise EmptyTestSet("BIC needs at least one instance")
    return avg_minus_loglik * n_test + 0.5 * param_count * math.log(n_test)


def evaluate(bn: BnModel, test: Dataset, epsilon: float = 0.0) -> EvalResult:
    """Compute every metric on a (normalized) test set."""
    avg = avg_minus_loglik(bn, test, epsilon)
    count = param_count(bn)
    result = EvalResult(avg, bic(avg, count, test.n_rows), count, test.n_rows)
    log.debug("evaluated %r", result)
    return result


@rich.repr.auto
@dataclass(frozen=True)
class StopDecision:
    """Outcome of early stopping over a validation trace.

    Epochs are numbered from 1.
    """

    stop: bool
    stop_epoch: int | None
    best_epoch: int | None


class EarlyStopping:
    """Track a validation metric (lower is better) one epoch at a time.

    Args:
        patience: Number of consecutive epochs without improvement before stopping.
    """

    def __init__(self, patience: int = 3) -> None:
        if patience < 1:
            raise EvaluationError(f"Patience must be at least 1; found {patience}")
        self.patience = patience
        self.epoch = 0
        self.best_epoch: int | None = None
        self.best_value = math.inf
        self.stale = 0

    def __repr__(self) -> str:
        return f"EarlyStopping(patience={self.patience}, epoch={self.epoch}, best_epoch={self.best_epoch})"

    def update(self, value: float) -> bool:
        """Record the next epoch's value.

        Returns:
            `True` if this epoch is the new best.
        """
        self.epoch += 1
        if self.best_epoch is None or value < self.best_value:
            self.best_value = value
            self.best_epoch = self.epoch
            self.stale = 0
            return True
        self.stale += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.stale >= self.patience


def early_stopping(trace: Sequence[float], patience: int) -> StopDecision:
    """Apply early stopping to a complete trace.

    Args:
        trace: Validation metric per outer epoch.
        patience: Consecutive epochs without improvement to allow.

    Returns:
        Whether (and after which epoch) training stops, and the best epoch.
    """
    tracker = EarlyStopping(patience)
    for value in trace:
        tracker.update(value)
        if tracker.should_stop:
            return StopDecision(True, tracker.epoch, tracker.best_epoch)
    return StopDecision(False, None, tracker.best_epoch)


def _node_rng(seed: int, node_id: int) -> np.random.Generator:
    return seeded_rng(seed, node_id)


def _draw(
    bn: BnModel, node_id: int, matrix: FloatArray, rng: np.random.Generator
) -> FloatArray:
    """Draw a branch per row from the coefficients, then a value from that branch."""
    node_model = bn.node_models[node_id]
    means = node_model.means(matrix)
    rows = np.arange(matrix.shape[0])
    chosen = rng.choice(node_model.n_branches, size=matrix.shape[0], p=node_model.pi)
    std = np.sqrt([branch.variance for branch in node_model.branches])
    return means[rows, chosen] + std[chosen] * rng.standard_normal(matrix.shape[0])


def _denormalized(bn: BnModel, dataset: Dataset) -> Dataset:
    if bn.normalization is None:
        raise EvaluationError("Model has no normalization statistics to undo")
    return zscore_inverse(dataset, bn.normalization)


def sample(bn: BnModel, count: int, seed: int, denormalize: bool = False) -> Dataset:
    """Draw instances by ancestral sampling.

    Every node gets its own generator derived from `(seed, node id)`.

    Args:
        bn: Model.
        count: Number of instances.
        seed: Random seed.
        denormalize: Return values in the original units.

    Returns:
        Samples with a column per node, in node order.
    """
    if count < 0:
        raise EvaluationError(f"Sample count can't be negative; found {count}")
    dag = bn.dag
    matrix = np.zeros((count, dag.size))
    for node_id in dag.topological_order():
        matrix[:, node_id] = _draw(bn, node_id, matrix, _node_rng(seed, node_id))
    samples = Dataset(dag.nodes, matrix, bn.normalization)
    if denormalize:
        return _denormalized(bn, samples)
    return samples


def _parent_matrix(bn: BnModel, node_id: int, parent_rows: Dataset) -> FloatArray:
    parents = sorted(bn.dag.parents(node_id))
    names = [bn.dag.nodes[parent] for parent in parents]
    matrix = np.zeros((parent_rows.n_rows, bn.dag.size))
    if parents:
        matrix[:, parents] = parent_rows.align(names).values
    return matrix


def _output(bn: BnModel, node_id: int, values: FloatArray, denormalize: bool) -> FloatArray:
    if not denormalize:
        return values
    name = bn.dag.nodes[node_id]
    column = Dataset((name,), values[:, np.newaxis])
    return _denormalized(bn, column).values[:, 0]


def predict_node(
    bn: BnModel,
    node: NodeRef,
    parent_rows: Dataset,
    seed: int,
    denormalize: bool = False,
) -> FloatArray:
    """Draw a value of `node` for each row of parent values.

    Args:
        bn: Model.
        node: Node to predict.
        parent_rows: Normalized data with a column for every parent of `node`.
        seed: Random seed.
        denormalize: Return values in the original units.

    Raises:
        MissingColumn: If a parent has no column.
    """
    node_id = bn.dag.node_id(node)
    matrix = _parent_matrix(bn, node_id, parent_rows)
    values = _draw(bn, node_id, matrix, _node_rng(seed, node_id))
    return _output(bn, node_id, values, denormalize)


def expected_node(
    bn: BnModel, node: NodeRef, parent_rows: Dataset, denormalize: bool = False
) -> FloatArray:
    """Mixture mean of `node` for each row of parent values."""
    node_id = bn.dag.node_id(node)
    matrix = _parent_matrix(bn, node_id, parent_rows)
    values = bn.node_models[node_id].expected_value(matrix)
    return _output(bn, node_id, values, denormalize)


def prediction_table(actual: FloatArray, predicted: FloatArray) -> Dataset:
    """Actual and predicted values side by side, for plotting."""
    return Dataset(("actual", "predicted"), np.column_stack([actual, predicted]))
