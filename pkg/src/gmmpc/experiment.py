"""
Cross validation and model comparison.

Every fold is normalized with its own training statistics. Folds are independent, so they may
run concurrently in threads; results are always merged in fold order.

"""

from __future__ import annotations

import asyncio
from dataclasses import dataclass, replace
import logging
from typing import Iterable

import numpy as np
import rich.repr

from gmmpc.config import RunConfig
from gmmpc.data import Dataset, kfold_split, zscore_apply, zscore_fit_transform
from gmmpc.evaluation import EvalResult, evaluate
from gmmpc.graph import Dag
from gmmpc.model import KINDS, BnModel, Link, ModelKind, build_model
from gmmpc.mpc import Backend
from gmmpc.optim import TrainConfig, TrainReport, dio_train

log = logging.getLogger("gmmpc.experiment")


@rich.repr.auto
@dataclass(frozen=True)
class ModelSpec:
    """How to build an initial model."""

    kind: ModelKind = "gmm-mpc"
    link: Link = "linear"
    gmm_branches: int = 3
    bias_spread: float = 0.0
    mpc_backend: Backend = "fast"

    @classmethod
    def from_config(cls, config: RunConfig, kind: ModelKind | None = None) -> ModelSpec:
        """Model settings from a run configuration, optionally for another kind.

        The bias spread only applies to the ordinary GMM.
        """
        kind = kind or config.kind
        return cls(
            kind=kind,
            link=config.link,
            gmm_branches=config.gmm_branches,
            bias_spread=config.gmm_bias_spread if kind == "gmm" else 0.0,
            mpc_backend=config.mpc_backend,
        )

    def build(self, dag: Dag) -> BnModel:
        return build_model(
            dag,
            self.kind,
            self.link,
            self.gmm_branches,
            bias_spread=self.bias_spread,
            mpc_backend=self.mpc_backend,
        )


@rich.repr.auto
@dataclass(frozen=True)
class FoldResult:
    """Outcome of training and testing on one fold."""

    fold: int
    seed: int
    result: EvalResult
    report: TrainReport
    model: BnModel

    def __rich_repr__(self) -> rich.repr.Result:
        yield "fold", self.fold
        yield "seed", self.seed
        yield "result", self.result


def train_fold(
    dag: Dag,
    spec: ModelSpec,
    train: Dataset,
    test: Dataset,
    config: TrainConfig,
    *,
    fold: int = 0,
    early_stopping: bool = True,
    eval_epsilon: float = 0.0,
) -> FoldResult:
    """Normalize with training statistics, train, and evaluate on the test data.

    Args:
        dag: Graph.
        spec: Model to build.
        train: Training rows, in original units.
        test: Test rows, in original units.
        config: Training configuration.
        fold: Fold index (for reporting).
        early_stopping: Use the test rows for early stopping.
        eval_epsilon: Epsilon used for the reported metrics.
    """
    normalized_train = zscore_fit_transform(train.align(dag.nodes))
    assert normalized_train.norm_stats is not None
    normalized_test = zscore_apply(normalized_train.norm_stats, test.align(dag.nodes))

    bn = spec.build(dag)
    bn.normalization = normalized_train.norm_stats
    trained, report = dio_train(
        bn,
        normalized_train,
        config,
        normalized_test if early_stopping else None,
    )
    result = evaluate(trained, normalized_test, eval_epsilon)
    log.info(
        "%s fold %s; avg NLL %.4f, BIC %.1f",
        spec.kind,
        fold,
        result.avg_minus_loglik,
        result.bic,
    )
    return FoldResult(fold, config.seed, result, report, trained)


@rich.repr.auto
@dataclass(frozen=True)
class CvResult:
    """Cross validation results of one model."""

    spec: ModelSpec
    epochs: str
    folds: tuple[FoldResult, ...]

    def __rich_repr__(self) -> rich.repr.Result:
        yield self.spec
        yield "folds", len(self.folds)
        yield "avg_minus_loglik", self.avg_minus_loglik

    @property
    def avg_minus_loglik(self) -> tuple[float, float]:
        """Mean and variance across folds."""
        return mean_variance(fold.result.avg_minus_loglik for fold in self.folds)

    @property
    def bic(self) -> tuple[float, float]:
        """Mean and variance across folds."""
        return mean_variance(fold.result.bic for fold in self.folds)

    @property
    def param_count(self) -> int:
        return self.folds[0].result.param_count

    def to_json(self) -> dict[str, object]:
        avg_mean, avg_variance = self.avg_minus_loglik
        bic_mean, bic_variance = self.bic
        return {
            "kind": self.spec.kind,
            "link": self.spec.link,
            "epochs": self.epochs,
            "param_count": self.param_count,
            "avg_minus_loglik": {
                "mean": avg_mean,
                "variance": avg_variance,
                "folds": [fold.result.avg_minus_loglik for fold in self.folds],
            },
            "bic": {
                "mean": bic_mean,
                "variance": bic_variance,
                "folds": [fold.result.bic for fold in self.folds],
            },
            "stopped_early": [fold.report.stopped_early for fold in self.folds],
        }


def mean_variance(values: Iterable[float]) -> tuple[float, float]:
    """Mean and (population) variance."""
    array = np.fromiter(values, dtype=np.float64)
    return float(array.mean()), float(array.var())


def format_mean_variance(mean: float, variance: float, digits: int = 2) -> str:
    return f"{mean:.{digits}f}±{variance:.{digits}f}"


def cross_validate(
    dag: Dag,
    data: Dataset,
    spec: ModelSpec,
    config: TrainConfig,
    folds: int = 5,
    *,
    early_stopping: bool = True,
    eval_epsilon: float = 0.0,
    jobs: int = 1,
) -> CvResult:
    """K-fold cross validation of one model.

    Folds are split with `config.seed`, and fold `i` trains with seed `config.seed + i`.

    Args:
        dag: Graph.
        data: Data in original units, with a column per node.
        spec: Model to build.
        config: Training configuration.
        folds: Number of folds.
        early_stopping: Early stop on the held out fold.
        eval_epsilon: Epsilon used for the reported metrics.
        jobs: Number of folds to run concurrently.
    """
    splits = kfold_split(data.align(dag.nodes), folds, config.seed)
    fold_configs = [replace(config, seed=config.seed + fold) for fold in range(folds)]

    def run_fold(fold: int) -> FoldResult:
        train, test = splits[fold]
        return train_fold(
            dag,
            spec,
            train,
            test,
            fold_configs[fold],
            fold=fold,
            early_stopping=early_stopping,
            eval_epsilon=eval_epsilon,
        )

    if jobs > 1:
        results = asyncio.run(_run_concurrently(run_fold, folds, jobs))
    else:
        results = [run_fold(fold) for fold in range(folds)]
    return CvResult(spec, config.epochs, tuple(results))


async def _run_concurrently(run_fold, folds: int, jobs: int) -> list[FoldResult]:
    semaphore = asyncio.Semaphore(jobs)

    async def run(fold: int) -> FoldResult:
        async with semaphore:
            return await asyncio.to_thread(run_fold, fold)

    return list(await asyncio.gather(*[run(fold) for fold in range(folds)]))


def compare(
    dag: Dag,
    data: Dataset,
    config: RunConfig,
    kinds: Iterable[ModelKind] = KINDS,
) -> list[CvResult]:
    """Cross validate several model families on identical folds and seeds."""
    return [
        cross_validate(
            dag,
            data,
            ModelSpec.from_config(config, kind),
            config.train,
            config.folds,
            early_stopping=config.early_stopping,
            eval_epsilon=config.eval_epsilon,
            jobs=config.jobs,
        )
        for kind in kinds
    ]


def comparison_json(results: Iterable[CvResult], config: RunConfig) -> dict[str, object]:
    """The comparison table as JSON. Timings are left out."""
    return {
        "folds": config.folds,
        "seed": config.seed,
        "epsilon": config.train.epsilon,
        "eval_epsilon": config.eval_epsilon,
        "rows": [result.to_json() for result in results],
    }
