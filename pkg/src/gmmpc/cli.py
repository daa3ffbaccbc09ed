from __future__ import annotations

from contextlib import contextmanager
import logging
from pathlib import Path
from typing import Iterator

import click
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from gmmpc import constants

log = logging.getLogger("gmmpc.cli")

error_console = Console(stderr=True)


def set_process_title(title: str) -> None:
    """Set the process title.

    Args:
        title: Desired title.
    """
    try:
        import setproctitle

        setproctitle.setproctitle(title)
    except Exception:
        pass


def setup_logging(verbose: bool) -> None:
    """Log to stderr with rich, and optionally to a file in the state directory."""
    handlers: list[logging.Handler] = [
        RichHandler(console=error_console, show_path=False, show_time=False)
    ]
    if constants.LOG_FILE:
        from gmmpc.paths import get_log_file

        file_handler = logging.FileHandler(get_log_file(), encoding="utf-8")
        file_handler.setFormatter(
            logging.Formatter("%(asctime)s %(name)s %(levelname)s %(message)s")
        )
        handlers.append(file_handler)
    logging.basicConfig(
        level=logging.DEBUG if verbose or constants.DEBUG else logging.INFO,
        format="%(message)s",
        handlers=handlers,
        force=True,
    )


@contextmanager
def report_errors() -> Iterator[None]:
    """Print library errors and exit with code 1."""
    from gmmpc.atomic import AtomicWriteError
    from gmmpc.checkpoint import CheckpointError
    from gmmpc.config import ConfigError
    from gmmpc.data import DataError
    from gmmpc.evaluation import EvaluationError
    from gmmpc.graph import GraphError
    from gmmpc.model import ModelError
    from gmmpc.mpc import MpcError
    from gmmpc.optim import TrainingError

    try:
        yield
    except (
        AtomicWriteError,
        CheckpointError,
        ConfigError,
        DataError,
        EvaluationError,
        GraphError,
        ModelError,
        MpcError,
        TrainingError,
    ) as error:
        error_console.print(f"[bold red]{type(error).__name__}:[/] {error}", highlight=False)
        raise click.exceptions.Exit(1)


def load_run_config(ctx: click.Context, **overrides: object):
    """Resolve the run configuration from the config file, global options, and overrides."""
    from gmmpc.config import load_config

    options = ctx.find_root().obj or {}
    return load_config(options.get("config"), {**options["overrides"], **overrides})


def _output_path(config, path: str | None, default_name: str) -> Path:
    return Path(path) if path is not None else config.output_dir / default_name


def _load_dataset(path: str):
    from gmmpc.data import read_csv

    return read_csv(path)


def _normalized_for(bn, dataset):
    """Data aligned to the model's nodes, normalized with the model's statistics."""
    from gmmpc.data import zscore_apply

    dataset = dataset.align(bn.dag.nodes)
    if bn.normalization is None:
        return dataset
    return zscore_apply(bn.normalization, dataset)


graph_option = click.option(
    "--graph", metavar="PATH", default=None, help="Graph file, or builtin graph name."
)
data_option = click.option("--data", metavar="PATH", default=None, help="CSV data file.")
checkpoint_option = click.option(
    "--checkpoint",
    metavar="PATH",
    default=None,
    help="Model checkpoint (default: checkpoint.json in the output directory).",
)
kind_option = click.option(
    "--kind", type=click.Choice(["lg", "gmm", "gmm-mpc"]), default=None, help="Model family."
)
link_option = click.option(
    "--link", type=click.Choice(["linear", "sigmoid"]), default=None, help="Mean link."
)


def train_options(command):
    for option in reversed(
        [
            click.option("--outer", type=int, default=None, help="Outer iterations."),
            click.option("--inner", type=int, default=None, help="Inner iterations."),
            click.option("--batch-size", type=int, default=None, help="Mini-batch size."),
            click.option("--learning-rate", type=float, default=None, help="Adam learning rate."),
            click.option(
                "--optimizer",
                type=click.Choice(["adam", "full-em"]),
                default=None,
                help="Inner phase optimizer.",
            ),
        ]
    ):
        command = option(command)
    return command


def _train_overrides(
    outer: int | None,
    inner: int | None,
    batch_size: int | None,
    learning_rate: float | None,
    optimizer: str | None,
) -> dict[str, object]:
    return {
        "train.outer_iterations": outer,
        "train.inner_iterations": inner,
        "train.batch_size": batch_size,
        "train.learning_rate": learning_rate,
        "train.optimizer": optimizer,
    }


@click.group(invoke_without_command=True)
@click.option("-v", "--version", is_flag=True, help="Show version and exit.")
@click.option("--config", metavar="PATH", default=None, help="JSON config file.")
@click.option("--seed", type=int, default=None, help="Random seed.")
@click.option("--epsilon", type=float, default=None, help="Training epsilon.")
@click.option("--output-dir", metavar="PATH", default=None, help="Directory for outputs.")
@click.option("--verbose", is_flag=True, help="Enable debug logging.")
@click.pass_context
def main(
    ctx: click.Context,
    version: bool,
    config: str | None,
    seed: int | None,
    epsilon: float | None,
    output_dir: str | None,
    verbose: bool,
) -> None:
    """Gaussian mixture Bayesian networks over maximal parental cliques."""
    if version:
        from gmmpc import get_version

        click.echo(get_version())
        ctx.exit()
    if ctx.invoked_subcommand is None:
        click.echo(ctx.get_help())
        ctx.exit()
    setup_logging(verbose)
    set_process_title("gmmpc")
    ctx.obj = {
        "config": config,
        "overrides": {"seed": seed, "train.epsilon": epsilon, "output_dir": output_dir},
    }


@main.command("mpc")
@graph_option
@click.option("--node", metavar="NAME", default=None, help="Node to list (default: all nodes).")
@click.option(
    "--backend",
    type=click.Choice(["paper", "fast", "brute"]),
    default=None,
    help="MPC backend.",
)
@click.option("--text", "as_text", is_flag=True, help="Human readable output.")
@click.pass_context
def mpc(
    ctx: click.Context, graph: str | None, node: str | None, backend: str | None, as_text: bool
) -> None:
    """List maximal parental cliques, one JSON object per node."""
    from gmmpc import atomic
    from gmmpc.graph import open_graph
    from gmmpc.mpc import all_mpcs, find_mpcs

    with report_errors():
        config = load_run_config(ctx, graph=graph, **{"model.mpc_backend": backend})
        config.require("graph")
        dag = open_graph(config.graph)
        if node is None:
            mpc_sets = all_mpcs(dag, config.mpc_backend)
        else:
            mpc_sets = [find_mpcs(dag, node, config.mpc_backend)]
        if not as_text:
            for mpc_set in mpc_sets:
                click.echo(atomic.dumps_line(mpc_set.to_json(dag)))
            return
        for mpc_set in mpc_sets:
            cliques = " ".join(
                "{" + ", ".join(names) + "}" for names in mpc_set.names(dag)
            )
            click.echo(f"{dag.nodes[mpc_set.node]}: {cliques}".rstrip())


@main.command("train")
@graph_option
@data_option
@kind_option
@link_option
@train_options
@click.option(
    "--validation", metavar="PATH", default=None, help="Held out CSV for early stopping."
)
@click.pass_context
def train(
    ctx: click.Context,
    graph: str | None,
    data: str | None,
    kind: str | None,
    link: str | None,
    outer: int | None,
    inner: int | None,
    batch_size: int | None,
    learning_rate: float | None,
    optimizer: str | None,
    validation: str | None,
) -> None:
    """Train a model on a dataset, and write a checkpoint and report."""
    from gmmpc import atomic
    from gmmpc.checkpoint import save_checkpoint
    from gmmpc.config import ConfigError
    from gmmpc.data import zscore_apply, zscore_fit_transform
    from gmmpc.experiment import ModelSpec
    from gmmpc.graph import open_graph
    from gmmpc.optim import dio_train

    with report_errors():
        config = load_run_config(
            ctx,
            graph=graph,
            data=data,
            **{"model.kind": kind, "model.link": link},
            **_train_overrides(outer, inner, batch_size, learning_rate, optimizer),
        )
        config.require("graph", "data")
        if validation is not None and not config.early_stopping:
            raise ConfigError(
                "--validation is only used for early stopping; set train.early_stopping to true"
            )
        dag = open_graph(config.graph)
        train_data = zscore_fit_transform(_load_dataset(config.data).align(dag.nodes))
        assert train_data.norm_stats is not None
        validation_data = None
        if validation is not None:
            validation_data = zscore_apply(
                train_data.norm_stats, _load_dataset(validation).align(dag.nodes)
            )

        bn = ModelSpec.from_config(config).build(dag)
        bn.normalization = train_data.norm_stats
        trained, report = dio_train(bn, train_data, config.train, validation_data)

        save_checkpoint(config.output_dir / "checkpoint.json", trained)
        atomic.write_json_lines(
            config.output_dir / "train_report.jsonl",
            [*report.records(), {"summary": report.summary()}],  # type: ignore[list-item]
        )
        click.echo(
            f"trained {config.kind} ({report.epochs}); final train loss {report.final_train_loss:.6f}"
        )


@main.command("eval")
@checkpoint_option
@data_option
@click.option("--eval-epsilon", type=float, default=None, help="Evaluation epsilon.")
@click.pass_context
def evaluate_command(
    ctx: click.Context, checkpoint: str | None, data: str | None, eval_epsilon: float | None
) -> None:
    """Evaluate a checkpoint on a dataset."""
    from gmmpc import atomic
    from gmmpc.checkpoint import load_checkpoint
    from gmmpc.evaluation import evaluate

    with report_errors():
        config = load_run_config(ctx, data=data, **{"eval.epsilon": eval_epsilon})
        config.require("data")
        bn = load_checkpoint(_output_path(config, checkpoint, "checkpoint.json"))
        test = _normalized_for(bn, _load_dataset(config.data))
        result = evaluate(bn, test, config.eval_epsilon)
        atomic.write_json(config.output_dir / "metrics.json", result.to_json())
        click.echo(atomic.dumps(result.to_json()))


@main.command("sample")
@checkpoint_option
@click.option("--count", type=int, default=1000, help="Number of instances.")
@click.option("--out", metavar="PATH", default=None, help="CSV to write.")
@click.option("--normalized", is_flag=True, help="Keep values in normalized units.")
@click.pass_context
def sample_command(
    ctx: click.Context,
    checkpoint: str | None,
    count: int,
    out: str | None,
    normalized: bool,
) -> None:
    """Draw instances from a checkpoint by ancestral sampling."""
    from gmmpc.checkpoint import load_checkpoint
    from gmmpc.data import write_csv
    from gmmpc.evaluation import sample

    with report_errors():
        config = load_run_config(ctx)
        bn = load_checkpoint(_output_path(config, checkpoint, "checkpoint.json"))
        samples = sample(
            bn,
            count,
            config.seed,
            denormalize=not normalized and bn.normalization is not None,
        )
        out_path = _output_path(config, out, "samples.csv")
        write_csv(out_path, samples)
        click.echo(f"wrote {samples.n_rows} samples to {out_path}")


@main.command("predict")
@checkpoint_option
@data_option
@click.option("--node", metavar="NAME", required=True, help="Node to predict.")
@click.option(
    "--mode",
    type=click.Choice(["sample", "mean"]),
    default="sample",
    help="Draw a value, or use the mixture mean.",
)
@click.option("--out", metavar="PATH", default=None, help="CSV to write.")
@click.pass_context
def predict_command(
    ctx: click.Context,
    checkpoint: str | None,
    data: str | None,
    node: str,
    mode: str,
    out: str | None,
) -> None:
    """Predict a node from its parents, and write actual against predicted values."""
    from gmmpc.checkpoint import load_checkpoint
    from gmmpc.data import write_csv
    from gmmpc.evaluation import expected_node, predict_node, prediction_table

    with report_errors():
        config = load_run_config(ctx, data=data)
        config.require("data")
        bn = load_checkpoint(_output_path(config, checkpoint, "checkpoint.json"))
        dataset = _load_dataset(config.data)
        rows = _normalized_for(bn, dataset)
        denormalize = bn.normalization is not None
        if mode == "mean":
            predicted = expected_node(bn, node, rows, denormalize=denormalize)
        else:
            predicted = predict_node(bn, node, rows, config.seed, denormalize=denormalize)
        actual = dataset.column(bn.dag.name(node))
        out_path = _output_path(config, out, f"predict_{bn.dag.name(node)}.csv")
        write_csv(out_path, prediction_table(actual, predicted))
        click.echo(f"wrote {len(predicted)} predictions to {out_path}")


@main.command("compare")
@graph_option
@data_option
@link_option
@train_options
@click.option("--folds", type=int, default=None, help="Cross validation folds.")
@click.option("--jobs", type=int, default=None, help="Folds to run concurrently.")
@click.option(
    "--kinds",
    type=click.Choice(["lg", "gmm", "gmm-mpc"]),
    multiple=True,
    help="Model families to compare (default: all).",
)
@click.pass_context
def compare_command(
    ctx: click.Context,
    graph: str | None,
    data: str | None,
    link: str | None,
    outer: int | None,
    inner: int | None,
    batch_size: int | None,
    learning_rate: float | None,
    optimizer: str | None,
    folds: int | None,
    jobs: int | None,
    kinds: tuple[str, ...],
) -> None:
    """Cross validate the model families on identical folds."""
    from gmmpc import atomic
    from gmmpc.experiment import compare, comparison_json, format_mean_variance
    from gmmpc.graph import open_graph
    from gmmpc.model import KINDS

    with report_errors():
        config = load_run_config(
            ctx,
            graph=graph,
            data=data,
            **{"model.link": link, "eval.folds": folds, "eval.jobs": jobs},
            **_train_overrides(outer, inner, batch_size, learning_rate, optimizer),
        )
        config.require("graph", "data")
        dag = open_graph(config.graph)
        results = compare(dag, _load_dataset(config.data), config, kinds or KINDS)
        atomic.write_json(config.output_dir / "compare.json", comparison_json(results, config))

    table = Table("Model", "Avg. minus log likelihood", "BIC", "Parameters", "Epochs")
    for result in results:
        table.add_row(
            f"{result.spec.kind} ({result.spec.link})",
            format_mean_variance(*result.avg_minus_loglik),
            format_mean_variance(*result.bic, digits=0),
            str(result.param_count),
            result.epochs,
        )
    Console().print(table)


@main.command("dot")
@graph_option
@click.pass_context
def dot(ctx: click.Context, graph: str | None) -> None:
    """Export a graph in DOT format."""
    from gmmpc.graph import open_graph, to_dot

    with report_errors():
        config = load_run_config(ctx, graph=graph)
        config.require("graph")
        click.echo(to_dot(open_graph(config.graph)), nl=False)


@main.command("synth")
@graph_option
@click.option("--rows", type=int, default=1000, help="Number of rows.")
@click.option("--out", metavar="PATH", required=True, help="CSV to write.")
@click.option(
    "--collider",
    is_flag=True,
    help="Sample the known collider model, instead of a random model on the graph.",
)
@click.pass_context
def synth(
    ctx: click.Context, graph: str | None, rows: int, out: str, collider: bool
) -> None:
    """Generate a synthetic dataset with a column per graph node."""
    from gmmpc.data import write_csv
    from gmmpc.evaluation import sample
    from gmmpc.graph import open_graph
    from gmmpc.synthetic import collider_model, make_standin

    with report_errors():
        config = load_run_config(ctx, graph=graph)
        if collider:
            dataset = sample(collider_model(config.link), rows, config.seed)
        else:
            config.require("graph")
            dataset = make_standin(open_graph(config.graph), rows, config.seed)
        write_csv(out, dataset)
        click.echo(f"wrote {dataset.n_rows} rows to {out}")
