"""
Double Iteration Optimization.

Each outer epoch updates the mixture coefficients with an EM step (over the whole dataset), then
holds them fixed while mini-batch Adam updates the branch weights, biases and log variances.
With the "full-em" optimizer the inner phase is replaced by a closed-form M-step (linear link only).

"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
import logging
import math
from time import perf_counter
from typing import Literal, TypedDict

import numpy as np
import rich.repr
from scipy import linalg
from scipy.special import expit

from gmmpc.data import Dataset, FloatArray, minibatches
from gmmpc.evaluation import EarlyStopping
from gmmpc.model import (
    DEFAULT_EPSILON,
    LOG_VARIANCE_FLOOR,
    VARIANCE_FLOOR,
    BnModel,
    _mixture_log,
)

log = logging.getLogger("gmmpc.optim")

type Optimizer = Literal["adam", "full-em"]

OPTIMIZERS: tuple[Optimizer, ...] = ("adam", "full-em")

RIDGE = 1e-9
"""Added to the diagonal of the closed-form normal equations."""


class TrainingError(Exception):
    """Base class for training errors."""


class InvalidTrainConfig(TrainingError):
    """Training configuration is not valid."""


class EmptyDataset(TrainingError):
    """There are no instances to train on."""


@rich.repr.auto
class SingularSystem(TrainingError):
    """The normal equations of a branch couldn't be solved."""

    def __init__(self, node: str, branch: int, detail: str) -> None:
        self.node = node
        self.branch = branch
        super().__init__(
            f"Singular system for node {node!r}, branch {branch}; {detail}"
        )

    def __rich_repr__(self) -> rich.repr.Result:
        yield "node", self.node
        yield "branch", self.branch


@rich.repr.auto
class NonFiniteGradient(TrainingError):
    """A gradient component is NaN or infinite."""

    def __init__(self, node: str, branch: int, parameter: str) -> None:
        self.node = node
        self.branch = branch
        self.parameter = parameter
        super().__init__(
            f"Non-finite gradient for node {node!r}, branch {branch}, parameter {parameter!r}"
        )

    def __rich_repr__(self) -> rich.repr.Result:
        yield "node", self.node
        yield "branch", self.branch
        yield "parameter", self.parameter


class NonFiniteLoss(TrainingError):
    """The training loss stopped being finite."""

    def __init__(self, outer: int, loss: float) -> None:
        self.outer = outer
        self.loss = loss
        super().__init__(
            f"Training loss is {loss} after outer epoch {outer}; try a smaller learning rate or a larger epsilon"
        )


@rich.repr.auto
@dataclass(frozen=True)
class TrainConfig:
    """Training hyper-parameters."""

    outer_iterations: int = 4
    inner_iterations: int = 20
    batch_size: int = 3000
    learning_rate: float = 0.005
    epsilon: float = DEFAULT_EPSILON
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    optimizer: Optimizer = "adam"
    patience: int = 3

    def __post_init__(self) -> None:
        if self.outer_iterations < 0 or self.inner_iterations < 0:
            raise InvalidTrainConfig("Iteration counts can't be negative")
        if self.batch_size < 1:
            raise InvalidTrainConfig(f"Batch size must be at least 1; found {self.batch_size}")
        if not self.learning_rate > 0:
            raise InvalidTrainConfig(
                f"Learning rate must be positive; found {self.learning_rate}"
            )
        if not self.epsilon >= 0:
            raise InvalidTrainConfig(f"Epsilon can't be negative; found {self.epsilon}")
        for name in ("adam_beta1", "adam_beta2"):
            if not 0 <= getattr(self, name) < 1:
                raise InvalidTrainConfig(f"{name} must be in [0, 1)")
        if self.optimizer not in OPTIMIZERS:
            raise InvalidTrainConfig(
                f"Unknown optimizer {self.optimizer!r}; expected one of {OPTIMIZERS}"
            )
        if self.patience < 1:
            raise InvalidTrainConfig(f"Patience must be at least 1; found {self.patience}")

    @property
    def epochs(self) -> str:
        """Epochs in the form "inner x outer"."""
        return f"{self.inner_iterations}×{self.outer_iterations}"


class EpochRecord(TypedDict):
    """One line of the training report."""

    outer: int
    train_loss: float
    val_avg_nll: float | None


@rich.repr.auto
@dataclass
class TrainReport:
    """What happened during training."""

    epochs: str
    loss_per_outer_epoch: list[float] = field(default_factory=list)
    val_avg_nll: list[float] = field(default_factory=list)
    final_train_loss: float = math.nan
    wall_time_seconds: float = 0.0
    best_outer: int | None = None
    stopped_early: bool = False

    def __rich_repr__(self) -> rich.repr.Result:
        yield "epochs", self.epochs
        yield "outer_epochs", len(self.loss_per_outer_epoch)
        yield "final_train_loss", self.final_train_loss
        yield "best_outer", self.best_outer, None

    def records(self) -> list[EpochRecord]:
        """One record per completed outer epoch."""
        return [
            {
                "outer": outer,
                "train_loss": train_loss,
                "val_avg_nll": (
                    self.val_avg_nll[outer - 1] if outer <= len(self.val_avg_nll) else None
                ),
            }
            for outer, train_loss in enumerate(self.loss_per_outer_epoch, 1)
        ]

    def summary(self) -> dict[str, object]:
        return {
            "epochs": self.epochs,
            "final_train_loss": self.final_train_loss,
            "wall_time_seconds": self.wall_time_seconds,
            "best_outer": self.best_outer,
            "stopped_early": self.stopped_early,
        }


@dataclass(frozen=True)
class ParameterSlot:
    """Where one branch's parameters live in the flat parameter vector.

    Layout is [weights..., bias, log variance].
    """

    node: int
    branch: int
    offset: int
    n_weights: int

    @property
    def bias_index(self) -> int:
        return self.offset + self.n_weights

    @property
    def log_var_index(self) -> int:
        return self.offset + self.n_weights + 1


class ParameterLayout:
    """Maps the weights, biases and log variances of a model onto a flat vector."""

    def __init__(self, bn: BnModel) -> None:
        self.slots: list[ParameterSlot] = []
        offset = 0
        for node_model in bn.node_models:
            for branch_index, branch in enumerate(node_model.branches):
                slot = ParameterSlot(node_model.node, branch_index, offset, len(branch.inputs))
                self.slots.append(slot)
                offset += slot.n_weights + 2
        self.size = offset
        self.log_var_indices = np.array(
            [slot.log_var_index for slot in self.slots], dtype=np.int64
        )

    def pack(self, bn: BnModel) -> FloatArray:
        theta = np.empty(self.size)
        for slot in self.slots:
            branch = bn.node_models[slot.node].branches[slot.branch]
            theta[slot.offset : slot.bias_index] = branch.weights
            theta[slot.bias_index] = branch.bias
            theta[slot.log_var_index] = branch.log_var
        return theta

    def unpack(self, bn: BnModel, theta: FloatArray) -> None:
        for slot in self.slots:
            branch = bn.node_models[slot.node].branches[slot.branch]
            branch.weights = theta[slot.offset : slot.bias_index].copy()
            branch.bias = float(theta[slot.bias_index])
            branch.log_var = float(theta[slot.log_var_index])

    def clamp(self, theta: FloatArray) -> FloatArray:
        """Apply the variance floor."""
        theta = theta.copy()
        theta[self.log_var_indices] = np.maximum(
            theta[self.log_var_indices], LOG_VARIANCE_FLOOR
        )
        return theta

    def describe(self, index: int) -> tuple[int, int, str]:
        """Get (node, branch, parameter name) for a position in the vector."""
        for slot in self.slots:
            if slot.offset <= index <= slot.log_var_index:
                if index == slot.bias_index:
                    return slot.node, slot.branch, "bias"
                if index == slot.log_var_index:
                    return slot.node, slot.branch, "log_var"
                return slot.node, slot.branch, f"weights[{index - slot.offset}]"
        raise IndexError(index)


def responsibility_matrices(
    bn: BnModel, matrix: FloatArray, epsilon: float
) -> list[FloatArray]:
    """Responsibilities (N x K) of every node, in node order."""
    return [node_model.responsibilities(matrix, epsilon) for node_model in bn.node_models]


def _em_pi_update(bn: BnModel, matrix: FloatArray, epsilon: float) -> list[FloatArray]:
    if not matrix.shape[0]:
        raise EmptyDataset("Can't update coefficients without data")
    updated: list[FloatArray] = []
    for node_model, gamma in zip(bn.node_models, responsibility_matrices(bn, matrix, epsilon)):
        if node_model.n_branches == 1:
            pi = np.ones(1)
        else:
            pi = gamma.sum(axis=0) / matrix.shape[0]
            # Epsilon leaves a little mass off the simplex
            pi = pi / pi.sum()
        node_model.pi = pi
        updated.append(pi)
    log.debug("updated coefficients; %r", [pi.round(4).tolist() for pi in updated])
    return updated


def em_pi_update(bn: BnModel, data: Dataset, epsilon: float = DEFAULT_EPSILON) -> list[FloatArray]:
    """Set every node's coefficients to the mean responsibility of each branch.

    The model is updated in place.

    Args:
        bn: Model.
        data: Full training data.
        epsilon: Stabilizing constant in the responsibility denominator.

    Raises:
        EmptyDataset: If `data` has no rows.

    Returns:
        The new coefficients, in node order.
    """
    return _em_pi_update(bn, bn.matrix(data), epsilon)


def _closed_form_mstep(bn: BnModel, matrix: FloatArray, gammas: list[FloatArray]) -> None:
    dag = bn.dag
    for node_model, gamma in zip(bn.node_models, gammas):
        if node_model.link != "linear":
            raise TrainingError(
                f"Closed-form updates need the linear link; node {dag.nodes[node_model.node]!r}"
                f" uses {node_model.link!r}"
            )
        x = matrix[:, node_model.node]
        for branch_index, branch in enumerate(node_model.branches):
            weights = gamma[:, branch_index]
            total_weight = weights.sum()
            if not total_weight > 0:
                log.debug(
                    "skipping branch %s of %r; no responsibility",
                    branch_index,
                    dag.nodes[node_model.node],
                )
                continue
            design = np.column_stack([matrix[:, list(branch.inputs)], np.ones(len(x))])
            normal = design.T @ (weights[:, np.newaxis] * design)
            normal += RIDGE * np.eye(normal.shape[0])
            rhs = design.T @ (weights * x)
            try:
                solution = linalg.solve(normal, rhs, assume_a="pos")
            except (linalg.LinAlgError, ValueError) as error:
                raise SingularSystem(
                    dag.nodes[node_model.node], branch_index, str(error)
                ) from None
            if not np.all(np.isfinite(solution)):
                raise SingularSystem(
                    dag.nodes[node_model.node], branch_index, "solution is not finite"
                )
            residual = x - design @ solution
            branch.weights = solution[:-1].copy()
            branch.bias = float(solution[-1])
            branch.variance = max(
                float(weights @ residual**2 / total_weight), VARIANCE_FLOOR
            )


def closed_form_mstep(bn: BnModel, data: Dataset, gammas: list[FloatArray]) -> None:
    """Solve for the weights, biases and variances given responsibilities.

    Weights and bias are solved jointly as a weighted least squares problem (with a constant
    input appended), then the variance is the weighted mean squared residual. The model is
    updated in place.

    Args:
        bn: Model (linear link only).
        data: Training data.
        gammas: Responsibilities per node (N x K), as from `responsibility_matrices`.

    Raises:
        TrainingError: If a node uses the sigmoid link.
        SingularSystem: If a branch's system can't be solved.
    """
    _closed_form_mstep(bn, bn.matrix(data), gammas)


def _loss_gradient(
    bn: BnModel, layout: ParameterLayout, matrix: FloatArray, epsilon: float
) -> FloatArray:
    gradient = np.zeros(layout.size)
    slots = iter(layout.slots)
    for node_model in bn.node_models:
        x = matrix[:, node_model.node]
        residuals: list[FloatArray] = []
        slopes: list[FloatArray] = []
        log_densities: list[FloatArray] = []
        for branch in node_model.branches:
            inputs = matrix[:, list(branch.inputs)]
            z = inputs @ branch.weights
            if node_model.link == "sigmoid":
                activation = expit(z)
                mean = activation + branch.bias
                slopes.append(activation * (1.0 - activation))
            else:
                mean = z + branch.bias
                slopes.append(np.ones_like(z))
            residual = x - mean
            residuals.append(residual)
            log_densities.append(
                -0.5 * (math.log(2 * math.pi) + branch.log_var)
                - residual**2 / (2.0 * math.exp(branch.log_var))
            )
        with np.errstate(divide="ignore"):
            weighted = np.log(node_model.pi) + np.column_stack(log_densities)
        posterior = np.exp(weighted - _mixture_log(weighted, epsilon)[:, np.newaxis])

        for branch_index, branch in enumerate(node_model.branches):
            slot = next(slots)
            variance = math.exp(branch.log_var)
            residual = residuals[branch_index]
            share = posterior[:, branch_index]
            scaled = share * residual / variance
            gradient[slot.offset : slot.bias_index] = -(
                (scaled * slopes[branch_index]) @ matrix[:, list(branch.inputs)]
            )
            gradient[slot.bias_index] = -scaled.sum()
            gradient[slot.log_var_index] = -(
                share * (residual**2 / (2.0 * variance) - 0.5)
            ).sum()

    if not np.all(np.isfinite(gradient)):
        index = int(np.flatnonzero(~np.isfinite(gradient))[0])
        node, branch_index, parameter = layout.describe(index)
        raise NonFiniteGradient(bn.dag.nodes[node], branch_index, parameter)
    return gradient


def loss_gradient(
    bn: BnModel, batch: Dataset, epsilon: float = DEFAULT_EPSILON
) -> FloatArray:
    """Gradient of the batch loss with respect to every weight, bias and log variance.

    The vector follows `ParameterLayout(bn)`.

    Raises:
        EmptyDataset: If the batch has no rows.
        NonFiniteGradient: If a component is not finite.
    """
    matrix = bn.matrix(batch)
    if not matrix.shape[0]:
        raise EmptyDataset("Can't compute a gradient without data")
    return _loss_gradient(bn, ParameterLayout(bn), matrix, epsilon)


@dataclass(frozen=True)
class AdamState:
    """First and second moment estimates of Adam."""

    m: FloatArray
    v: FloatArray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(
        cls, size: int, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8
    ) -> AdamState:
        return cls(np.zeros(size), np.zeros(size), 0, beta1, beta2, eps)


def adam_step(
    params: FloatArray, gradient: FloatArray, state: AdamState, learning_rate: float
) -> tuple[FloatArray, AdamState]:
    """One bias-corrected Adam update.

    Args:
        params: Current parameters.
        gradient: Gradient at `params`.
        state: Moment estimates.
        learning_rate: Step size.

    Returns:
        New parameters and state (the inputs aren't modified).
    """
    if params.shape != gradient.shape or state.m.shape != gradient.shape:
        raise TrainingError(
            f"Adam dimensions don't match; params {params.shape}, gradient {gradient.shape},"
            f" state {state.m.shape}"
        )
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * gradient
    v = state.beta2 * state.v + (1.0 - state.beta2) * (gradient * gradient)
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    params = params - learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, replace(state, m=m, v=v, t=t)


class Adam:
    """Adam over a flat parameter vector."""

    def __init__(self, params: FloatArray, config: TrainConfig) -> None:
        self.params = params
        self.learning_rate = config.learning_rate
        self.state = AdamState.fresh(
            params.shape[0], config.adam_beta1, config.adam_beta2, config.adam_eps
        )

    @property
    def steps(self) -> int:
        return self.state.t

    def step(self, gradient: FloatArray) -> FloatArray:
        self.params, self.state = adam_step(
            self.params, gradient, self.state, self.learning_rate
        )
        return self.params


def dio_train(
    bn: BnModel,
    data: Dataset,
    config: TrainConfig,
    validation: Dataset | None = None,
) -> tuple[BnModel, TrainReport]:
    """Train a model with Double Iteration Optimization.

    Args:
        bn: Initial model (not modified).
        data: Training data (normalized).
        config: Training configuration.
        validation: Optional held-out data; enables early stopping on its average minus log
            likelihood, and restores the best outer epoch.

    Raises:
        TrainingError: If training fails.

    Returns:
        The trained model and a report.
    """
    start_time = perf_counter()
    bn = bn.copy()
    matrix = bn.matrix(data)
    n_rows = matrix.shape[0]
    if not n_rows:
        raise EmptyDataset("Can't train without data")
    if config.optimizer == "full-em" and any(
        model.link != "linear" for model in bn.node_models
    ):
        raise InvalidTrainConfig("The full-em optimizer requires the linear link")
    validation_matrix = None if validation is None else bn.matrix(validation)
    if validation_matrix is not None and not validation_matrix.shape[0]:
        validation_matrix = None

    epsilon = config.epsilon
    layout = ParameterLayout(bn)
    adam = Adam(layout.pack(bn), config)
    report = TrainReport(config.epochs)
    early_stopping = EarlyStopping(config.patience)
    best_models = None

    for outer in range(1, config.outer_iterations + 1):
        _em_pi_update(bn, matrix, epsilon)

        if config.optimizer == "full-em":
            gammas = responsibility_matrices(bn, matrix, epsilon)
            _closed_form_mstep(bn, matrix, gammas)
        else:
            for inner in range(config.inner_iterations):
                pass_index = (outer - 1) * config.inner_iterations + inner
                for rows in minibatches(n_rows, config.batch_size, config.seed, pass_index):
                    gradient = _loss_gradient(bn, layout, matrix[rows], epsilon)
                    adam.params = layout.clamp(adam.step(gradient))
                    layout.unpack(bn, adam.params)

        train_loss = float(-bn.loglik(matrix, epsilon).sum())
        if not math.isfinite(train_loss):
            raise NonFiniteLoss(outer, train_loss)
        report.loss_per_outer_epoch.append(train_loss)

        if validation_matrix is None:
            log.info("outer epoch %s/%s; train loss %.6f", outer, config.outer_iterations, train_loss)
            continue

        val_avg_nll = float(-bn.loglik(validation_matrix).mean())
        report.val_avg_nll.append(val_avg_nll)
        log.info(
            "outer epoch %s/%s; train loss %.6f, validation avg NLL %.6f",
            outer,
            config.outer_iterations,
            train_loss,
            val_avg_nll,
        )
        if early_stopping.update(val_avg_nll):
            best_models = bn.copy().node_models
        if early_stopping.should_stop:
            report.stopped_early = True
            log.info(
                "early stopping after outer epoch %s; best was %s",
                outer,
                early_stopping.best_epoch,
            )
            break

    if best_models is not None:
        bn.node_models = best_models
        report.best_outer = early_stopping.best_epoch

    report.final_train_loss = float(-bn.loglik(matrix, epsilon).sum())
    report.wall_time_seconds = perf_counter() - start_time
    return bn, report
