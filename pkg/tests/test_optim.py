import math

import numpy as np
import pytest

from gmmpc.data import Dataset
from gmmpc.graph import Dag, read_builtin_graph
from gmmpc.model import BranchParams, build_model, responsibilities, total_loss
from gmmpc.optim import (
    AdamState,
    EmptyDataset,
    InvalidTrainConfig,
    NonFiniteGradient,
    ParameterLayout,
    TrainConfig,
    TrainingError,
    adam_step,
    closed_form_mstep,
    dio_train,
    em_pi_update,
    loss_gradient,
    responsibility_matrices,
)
from gmmpc.synthetic import collider_model, random_model


def ols(design: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, float]:
    """Least squares with an intercept, by the normal equations."""
    augmented = np.column_stack([design, np.ones(len(target))])
    solution = np.linalg.solve(augmented.T @ augmented, augmented.T @ target)
    residual = target - augmented @ solution
    return solution, float(np.mean(residual**2))


@pytest.mark.parametrize(
    "kwargs",
    [
        {"learning_rate": 0.0},
        {"batch_size": 0},
        {"adam_beta1": 1.0},
        {"adam_beta2": -0.1},
        {"optimizer": "lbfgs"},
        {"outer_iterations": -1},
        {"epsilon": -1e-8},
        {"patience": 0},
    ],
)
def test_train_config_invalid(kwargs):
    with pytest.raises(InvalidTrainConfig):
        TrainConfig(**kwargs)


def test_train_config_epochs():
    assert TrainConfig(outer_iterations=4, inner_iterations=20).epochs == "20×4"


def test_em_pi_update_single_branch():
    bn = build_model(Dag.from_names(["A", "B"], [("A", "B")]), "lg")
    data = Dataset(("A", "B"), np.array([[0.0, 1.0], [2.0, -1.0]]))
    updated = em_pi_update(bn, data, epsilon=0.0)
    assert [pi.tolist() for pi in updated] == [[1.0], [1.0]]


def test_em_pi_update_identical_branches_fixed_point():
    dag = Dag.from_names(["A", "B"], [("A", "B")])
    bn = build_model(dag, "gmm", gmm_branch_count=2)
    data = Dataset(("A", "B"), np.array([[0.0, 1.0], [2.0, -1.0], [0.5, 0.5]]))
    em_pi_update(bn, data, epsilon=0.0)
    np.testing.assert_allclose(bn.node_models[1].pi, [0.5, 0.5], atol=1e-15)


def test_em_pi_update_hand_computed():
    dag = read_builtin_graph("collider4")
    bn = collider_model()
    collider = bn.node_models[dag.node_id("T")]
    collider.pi = np.array([0.5, 0.5])
    rows = np.array(
        [
            [0.5, -0.2, 2.1, 2.0],
            [-1.0, 1.0, -2.4, -2.0],
            [0.0, 0.0, 0.0, 0.3],
            [1.2, -0.7, 0.5, 0.4],
        ]
    )
    data = Dataset(dag.nodes, rows)
    gammas = [
        responsibilities(collider, [[row[0]], [row[1]]], row[2], 0.0) for row in rows
    ]
    expected = np.mean(gammas, axis=0)
    updated = em_pi_update(bn, data, epsilon=0.0)
    np.testing.assert_allclose(updated[dag.node_id("T")], expected, rtol=1e-12)
    np.testing.assert_allclose(collider.pi, expected, rtol=1e-12)


def test_em_pi_update_keeps_simplex(collider_data):
    dag = read_builtin_graph("collider4")
    bn = random_model(dag, seed=3)
    for _ in range(5):
        for pi in em_pi_update(bn, collider_data, epsilon=0.0):
            assert abs(pi.sum() - 1.0) <= 1e-12
            assert np.all(pi >= 0)


def test_em_pi_update_empty():
    bn = build_model(Dag.from_names(["A"], []), "lg")
    with pytest.raises(EmptyDataset):
        em_pi_update(bn, Dataset(("A",), np.zeros((0, 1))))


def test_em_pi_update_does_not_increase_loss(collider_data):
    bn = random_model(read_builtin_graph("collider4"), seed=11)
    for _ in range(10):
        before = total_loss(bn, collider_data, epsilon=0.0)
        em_pi_update(bn, collider_data, epsilon=0.0)
        assert total_loss(bn, collider_data, epsilon=0.0) <= before + 1e-9


def test_closed_form_root_is_gaussian_mle():
    values = np.array([1.0, 2.0, 4.0, 7.0])
    bn = build_model(Dag.from_names(["A"], []), "lg")
    data = Dataset(("A",), values[:, np.newaxis])
    closed_form_mstep(bn, data, [np.ones((4, 1))])
    (branch,) = bn.node_models[0].branches
    assert branch.bias == pytest.approx(values.mean())
    assert branch.variance == pytest.approx(values.var())


def test_closed_form_single_parent_is_ols():
    rng = np.random.default_rng(8)
    parent = rng.normal(size=40)
    child = 1.5 * parent - 0.3 + rng.normal(scale=0.5, size=40)
    bn = build_model(Dag.from_names(["P", "C"], [("P", "C")]), "lg")
    data = Dataset(("P", "C"), np.column_stack([parent, child]))
    closed_form_mstep(bn, data, [np.ones((40, 1)), np.ones((40, 1))])
    (solution, variance) = ols(parent[:, np.newaxis], child)
    (branch,) = bn.node_models[1].branches
    assert branch.weights[0] == pytest.approx(solution[0], abs=1e-8)
    assert branch.bias == pytest.approx(solution[1], abs=1e-8)
    assert branch.variance == pytest.approx(variance, abs=1e-8)


def test_closed_form_one_hot_fits_subsets():
    rng = np.random.default_rng(9)
    dag = Dag.from_names(["P", "Q", "C"], [("P", "C"), ("Q", "C")])
    bn = build_model(dag, "gmm-mpc")
    matrix = rng.normal(size=(60, 3))
    data = Dataset(dag.nodes, matrix)
    assignment = rng.integers(0, 2, size=60)
    gamma = np.eye(2)[assignment]
    gammas = responsibility_matrices(bn, matrix, 0.0)
    gammas[2] = gamma
    closed_form_mstep(bn, data, gammas)
    for branch_index, branch in enumerate(bn.node_models[2].branches):
        rows = assignment == branch_index
        solution, variance = ols(matrix[rows][:, list(branch.inputs)], matrix[rows, 2])
        np.testing.assert_allclose(branch.weights, solution[:-1], atol=1e-8)
        assert branch.bias == pytest.approx(solution[-1], abs=1e-8)
        assert branch.variance == pytest.approx(variance, abs=1e-8)


def test_closed_form_requires_linear_link():
    bn = build_model(Dag.from_names(["A"], []), "lg", "sigmoid")
    data = Dataset(("A",), np.array([[1.0], [2.0]]))
    with pytest.raises(TrainingError):
        closed_form_mstep(bn, data, [np.ones((2, 1))])


def _random_case(case: int):
    rng = np.random.default_rng(case)
    size = int(rng.integers(1, 6))
    edges = frozenset(
        (first, second)
        for first in range(size)
        for second in range(first + 1, size)
        if rng.random() < 0.5
    )
    dag = Dag(tuple(f"N{index}" for index in range(size)), edges)
    kind = ("lg", "gmm", "gmm-mpc")[case % 3]
    link = ("linear", "sigmoid")[case // 3 % 2]
    bn = random_model(dag, kind, link, seed=case)
    batch = Dataset(dag.nodes, rng.normal(size=(int(rng.integers(1, 12)), size)))
    epsilon = (0.0, 1e-8, 1e-3)[case // 6 % 3]
    return bn, batch, epsilon


@pytest.mark.parametrize("case", range(120))
def test_gradient_matches_finite_differences(case):
    bn, batch, epsilon = _random_case(case)
    layout = ParameterLayout(bn)
    theta = layout.pack(bn)
    analytic = loss_gradient(bn, batch, epsilon)

    def loss_at(values: np.ndarray) -> float:
        probe = bn.copy()
        layout.unpack(probe, values)
        return total_loss(probe, batch, epsilon)

    step = 1e-6
    numeric = np.empty_like(theta)
    for index in range(len(theta)):
        forward = theta.copy()
        forward[index] += step
        backward = theta.copy()
        backward[index] -= step
        numeric[index] = (loss_at(forward) - loss_at(backward)) / (2 * step)
    relative_error = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))
    assert relative_error.max() < 1e-5


def test_gradient_zero_at_ols():
    rng = np.random.default_rng(2)
    parent = rng.normal(size=30)
    child = 0.8 * parent + rng.normal(scale=1.0, size=30)
    bn = build_model(Dag.from_names(["P", "C"], [("P", "C")]), "lg")
    data = Dataset(("P", "C"), np.column_stack([parent, child]))
    closed_form_mstep(bn, data, [np.ones((30, 1)), np.ones((30, 1))])
    np.testing.assert_allclose(loss_gradient(bn, data, 0.0), 0.0, atol=1e-7)


def test_gradient_symmetric_bias():
    bn = build_model(Dag.from_names(["P", "C"], [("P", "C")]), "lg")
    data = Dataset(("P", "C"), np.array([[0.0, 0.0]]))
    layout = ParameterLayout(bn)
    gradient = loss_gradient(bn, data, 0.0)
    assert gradient[layout.slots[1].bias_index] == 0.0


def test_gradient_non_finite():
    bn = build_model(Dag.from_names(["P", "C"], [("P", "C")]), "lg")
    bn.node_models[1].branches[0] = BranchParams((0,), np.array([math.nan]))
    data = Dataset(("P", "C"), np.array([[1.0, 0.0]]))
    with pytest.raises(NonFiniteGradient) as exc_info:
        loss_gradient(bn, data)
    assert exc_info.value.node == "C"
    assert exc_info.value.branch == 0


def test_adam_zero_gradient():
    params = np.array([1.0, -2.0])
    updated, state = adam_step(params, np.zeros(2), AdamState.fresh(2), 0.1)
    np.testing.assert_array_equal(updated, params)
    assert state.t == 1


def test_adam_first_step():
    params = np.array([0.0, 0.0])
    gradient = np.array([3.0, -0.5])
    updated, _ = adam_step(params, gradient, AdamState.fresh(2), 0.01)
    np.testing.assert_allclose(updated, [-0.01, 0.01], rtol=1e-6)


def test_adam_symmetry_and_determinism():
    params = np.array([0.5, 0.5])
    state = AdamState.fresh(2)
    for step in range(5):
        gradient = np.full(2, math.sin(step))
        params, state = adam_step(params, gradient, state, 0.01)
        assert params[0] == params[1]
    again, _ = adam_step(params, np.ones(2), state, 0.01)
    once_more, _ = adam_step(params, np.ones(2), state, 0.01)
    np.testing.assert_array_equal(again, once_more)


def test_adam_dimension_mismatch():
    with pytest.raises(TrainingError):
        adam_step(np.zeros(2), np.zeros(3), AdamState.fresh(2), 0.01)


def test_dio_zero_outer_iterations(collider_data):
    bn = build_model(read_builtin_graph("collider4"), "gmm-mpc")
    trained, report = dio_train(bn, collider_data, TrainConfig(outer_iterations=0))
    assert report.loss_per_outer_epoch == []
    assert report.records() == []
    layout = ParameterLayout(bn)
    np.testing.assert_array_equal(layout.pack(trained), layout.pack(bn))
    assert trained is not bn


def test_dio_full_em_lg_is_ols(collider_data):
    dag = read_builtin_graph("collider4")
    bn = build_model(dag, "lg")
    config = TrainConfig(outer_iterations=1, optimizer="full-em", epsilon=0.0)
    trained, _ = dio_train(bn, collider_data, config)
    matrix = collider_data.align(dag.nodes).values
    for node_model in trained.node_models:
        (branch,) = node_model.branches
        solution, variance = ols(matrix[:, list(branch.inputs)], matrix[:, node_model.node])
        np.testing.assert_allclose(branch.weights, solution[:-1], atol=1e-8)
        assert branch.bias == pytest.approx(solution[-1], abs=1e-8)
        assert branch.variance == pytest.approx(variance, abs=1e-8)


def test_dio_full_em_requires_linear(collider_data):
    bn = build_model(read_builtin_graph("collider4"), "gmm-mpc", "sigmoid")
    with pytest.raises(InvalidTrainConfig):
        dio_train(bn, collider_data, TrainConfig(optimizer="full-em"))


def test_dio_empty_data():
    bn = build_model(Dag.from_names(["A"], []), "lg")
    with pytest.raises(EmptyDataset):
        dio_train(bn, Dataset(("A",), np.zeros((0, 1))), TrainConfig())


def test_dio_collider_loss_non_increasing(collider_data):
    bn = build_model(read_builtin_graph("collider4"), "gmm-mpc")
    config = TrainConfig(
        outer_iterations=5,
        inner_iterations=20,
        batch_size=500,
        learning_rate=0.005,
        epsilon=0.0,
        seed=1,
    )
    _, report = dio_train(bn, collider_data, config)
    trace = report.loss_per_outer_epoch
    assert len(trace) == 5
    assert all(later <= earlier + 1e-6 * abs(earlier) for earlier, later in zip(trace, trace[1:]))


def test_dio_deterministic(collider_data):
    bn = build_model(read_builtin_graph("collider4"), "gmm-mpc")
    config = TrainConfig(outer_iterations=2, inner_iterations=3, batch_size=300, seed=5)
    _, first = dio_train(bn, collider_data, config)
    _, second = dio_train(bn, collider_data, config)
    assert first.loss_per_outer_epoch == second.loss_per_outer_epoch
    assert first.final_train_loss == second.final_train_loss


def test_dio_validation_report(collider_data):
    dag = read_builtin_graph("collider4")
    train = collider_data.take(range(0, 1500))
    validation = collider_data.take(range(1500, 2000))
    config = TrainConfig(outer_iterations=3, inner_iterations=2, batch_size=500, patience=3)
    trained, report = dio_train(build_model(dag, "gmm-mpc"), train, config, validation)
    assert len(report.val_avg_nll) == len(report.loss_per_outer_epoch) == 3
    assert report.best_outer == int(np.argmin(report.val_avg_nll)) + 1
    records = report.records()
    assert [record["outer"] for record in records] == [1, 2, 3]
    assert records[0]["val_avg_nll"] == report.val_avg_nll[0]
    assert report.final_train_loss == pytest.approx(total_loss(trained, train))
    assert report.epochs == "2×3"
