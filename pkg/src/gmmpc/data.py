"""
Datasets: CSV ingest, z-score normalization, k-fold splits and mini-batches.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
import io
import logging
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import numpy.typing as npt
import pandas as pd
import rich.repr

from gmmpc import atomic

log = logging.getLogger("gmmpc.data")

type FloatArray = npt.NDArray[np.float64]
type IndexArray = npt.NDArray[np.int64]

SEED_MASK = 0xFFFFFFFFFFFFFFFF


class DataError(Exception):
    """Base class for data related errors."""


@rich.repr.auto
class CsvFormatError(DataError):
    """The CSV could not be read."""

    def __init__(self, message: str, row: int | None = None) -> None:
        self.message = message
        self.row = row
        super().__init__(message if row is None else f"Row {row}: {message}")

    def __rich_repr__(self) -> rich.repr.Result:
        yield self.message
        yield "row", self.row, None


@rich.repr.auto
class MissingColumn(DataError):
    """A required column is not in the dataset."""

    def __init__(self, column: str) -> None:
        self.column = column
        super().__init__(f"Dataset has no column {column!r}")

    def __rich_repr__(self) -> rich.repr.Result:
        yield self.column


@rich.repr.auto
class ZeroVarianceColumn(DataError):
    """A column can't be normalized because it is constant."""

    def __init__(self, column: str) -> None:
        self.column = column
        super().__init__(f"Column {column!r} has zero variance")

    def __rich_repr__(self) -> rich.repr.Result:
        yield self.column


class InvalidFolds(DataError):
    """The fold count doesn't suit the dataset."""


@rich.repr.auto
@dataclass(frozen=True)
class NormStats:
    """Per-column mean and (population) standard deviation."""

    columns: tuple[str, ...]
    mean: FloatArray
    std: FloatArray

    def __rich_repr__(self) -> rich.repr.Result:
        yield list(self.columns)

    def select(self, columns: Sequence[str]) -> NormStats:
        """Statistics for a subset (or reordering) of columns."""
        index = [self._column_index(column) for column in columns]
        return NormStats(tuple(columns), self.mean[index], self.std[index])

    def _column_index(self, column: str) -> int:
        try:
            return self.columns.index(column)
        except ValueError:
            raise MissingColumn(column) from None

    def to_json(self) -> dict[str, list]:
        return {
            "columns": list(self.columns),
            "mean": [float(value) for value in self.mean],
            "std": [float(value) for value in self.std],
        }


@rich.repr.auto
@dataclass(frozen=True, eq=False)
class Dataset:
    """A column-named numeric matrix.

    Args:
        columns: Feature names.
        values: An N x n matrix of finite floats.
        norm_stats: Statistics used to normalize `values`, if they are normalized.
    """

    columns: tuple[str, ...]
    values: FloatArray
    norm_stats: NormStats | None = None

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] != len(self.columns):
            raise DataError(
                f"Expected a matrix with {len(self.columns)} columns; found shape {values.shape}"
            )
        if len(set(self.columns)) != len(self.columns):
            raise DataError("Column names must be unique")
        if not np.all(np.isfinite(values)):
            raise DataError("Dataset contains non-finite values")
        object.__setattr__(self, "values", values)

    def __rich_repr__(self) -> rich.repr.Result:
        yield list(self.columns)
        yield "rows", self.n_rows
        yield "normalized", self.norm_stats is not None, False

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    def column(self, name: str) -> FloatArray:
        try:
            return self.values[:, self.columns.index(name)]
        except ValueError:
            raise MissingColumn(name) from None

    def align(self, columns: Sequence[str]) -> Dataset:
        """Select (and reorder) columns.

        Raises:
            MissingColumn: If a column isn't present.
        """
        if tuple(columns) == self.columns:
            return self
        index: list[int] = []
        for column in columns:
            try:
                index.append(self.columns.index(column))
            except ValueError:
                raise MissingColumn(column) from None
        norm_stats = None if self.norm_stats is None else self.norm_stats.select(columns)
        return Dataset(tuple(columns), self.values[:, index], norm_stats)

    def take(self, rows: Sequence[int] | IndexArray) -> Dataset:
        """A dataset with the given rows."""
        return replace(self, values=self.values[np.asarray(rows, dtype=np.int64)])

    def to_csv(self) -> str:
        frame = pd.DataFrame(self.values, columns=list(self.columns))
        return frame.to_csv(index=False, float_format="%.17g", lineterminator="\n")


def load_csv(text: str) -> Dataset:
    """Parse a numeric CSV with a header row.

    Args:
        text: CSV text (comma separated, decimal points).

    Raises:
        CsvFormatError: If the file is empty, ragged, or has a non-numeric cell.

    Returns:
        A dataset in file column order.
    """
    try:
        frame = pd.read_csv(
            io.StringIO(text),
            dtype=str,
            keep_default_na=False,
            skip_blank_lines=True,
        )
    except pd.errors.EmptyDataError:
        raise CsvFormatError("File is empty") from None
    except pd.errors.ParserError as error:
        raise CsvFormatError(f"Malformed CSV; {error}") from None

    columns = tuple(str(column).strip() for column in frame.columns)
    if len(set(columns)) != len(columns) or any(
        column.startswith("Unnamed:") for column in columns
    ):
        raise CsvFormatError("Header should contain unique, non-empty column names", row=1)
    if frame.empty:
        raise CsvFormatError("File has a header but no data")

    numeric = frame.apply(lambda column: pd.to_numeric(column.str.strip(), errors="coerce"))
    values = numeric.to_numpy(dtype=np.float64)
    bad_cells = ~np.isfinite(values)
    if bad_cells.any():
        row_index, column_index = (int(index[0]) for index in np.nonzero(bad_cells))
        cell = frame.iat[row_index, column_index]
        # Header is row 1
        raise CsvFormatError(
            f"Missing or non-numeric value {cell!r} in column {columns[column_index]!r}",
            row=row_index + 2,
        )
    return Dataset(columns, values)


def read_csv(path: Path | str) -> Dataset:
    """Read a CSV file.

    Raises:
        DataError: If the file couldn't be read or parsed.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as error:
        raise DataError(f"Failed to read {str(path)!r}; {error}") from None
    try:
        dataset = load_csv(text)
    except CsvFormatError as error:
        raise CsvFormatError(f"{path}: {error.message}", row=error.row) from None
    log.info("read %s rows x %s columns from %s", dataset.n_rows, len(dataset.columns), path)
    return dataset


def write_csv(path: Path | str, dataset: Dataset) -> None:
    atomic.write(path, dataset.to_csv())


def zscore_fit_transform(train: Dataset) -> Dataset:
    """Normalize each column to zero mean and unit (population) standard deviation.

    Args:
        train: Training data.

    Raises:
        DataError: If `train` is empty.
        ZeroVarianceColumn: If a column is constant.

    Returns:
        Normalized data, with the statistics in `norm_stats`.
    """
    if not train.n_rows:
        raise DataError("Can't normalize an empty dataset")
    mean = train.values.mean(axis=0)
    std = train.values.std(axis=0)
    for column, column_std in zip(train.columns, std):
        if not column_std > 0:
            raise ZeroVarianceColumn(column)
    stats = NormStats(train.columns, mean, std)
    return zscore_apply(stats, train)


def zscore_apply(stats: NormStats, other: Dataset) -> Dataset:
    """Normalize data with previously fitted statistics."""
    stats = stats.select(other.columns)
    return Dataset(other.columns, (other.values - stats.mean) / stats.std, stats)


def zscore_inverse(dataset: Dataset, stats: NormStats | None = None) -> Dataset:
    """Map normalized data back to the original units."""
    stats = stats or dataset.norm_stats
    if stats is None:
        raise DataError("Dataset isn't normalized")
    stats = stats.select(dataset.columns)
    return Dataset(dataset.columns, dataset.values * stats.std + stats.mean)


def seeded_rng(seed: int, *keys: int) -> np.random.Generator:
    """A generator keyed by a seed and optional stream keys.

    The seed is taken modulo 2**64, so negative seeds are accepted.
    """
    return np.random.default_rng([seed & SEED_MASK, *keys])


def kfold_indices(n_rows: int, k: int, seed: int) -> list[IndexArray]:
    """Split a seeded permutation of rows into k test folds.

    The first `n_rows % k` folds get one extra row.

    Raises:
        InvalidFolds: If k < 2 or there are fewer rows than folds.
    """
    if k < 2:
        raise InvalidFolds(f"Need at least 2 folds; found {k}")
    if n_rows < k:
        raise InvalidFolds(f"Can't split {n_rows} rows into {k} folds")
    permutation = seeded_rng(seed).permutation(n_rows)
    base, extra = divmod(n_rows, k)
    folds: list[IndexArray] = []
    start = 0
    for fold in range(k):
        size = base + (1 if fold < extra else 0)
        folds.append(permutation[start : start + size])
        start += size
    return folds


def kfold_split(data: Dataset, k: int, seed: int) -> list[tuple[Dataset, Dataset]]:
    """Split data into k (train, test) pairs, where each row is tested exactly once."""
    folds = kfold_indices(data.n_rows, k, seed)
    splits: list[tuple[Dataset, Dataset]] = []
    for fold, test_rows in enumerate(folds):
        train_rows = np.concatenate(
            [rows for other, rows in enumerate(folds) if other != fold]
        )
        splits.append((data.take(np.sort(train_rows)), data.take(np.sort(test_rows))))
    return splits


def minibatches(
    n_rows: int, batch_size: int, seed: int, pass_index: int
) -> list[IndexArray]:
    """Row indices for one pass of mini-batches.

    The shuffle is keyed by `(seed, pass_index)`, so a pass can be reproduced on its own.
    The last batch may be short.
    """
    if batch_size < 1:
        raise DataError(f"Batch size must be at least 1; found {batch_size}")
    rng = seeded_rng(seed, pass_index)
    order = rng.permutation(n_rows)
    return [order[start : start + batch_size] for start in range(0, n_rows, batch_size)]


def concat(datasets: Iterable[Dataset]) -> Dataset:
    datasets = list(datasets)
    if not datasets:
        raise DataError("Nothing to concatenate")
    columns = datasets[0].columns
    return Dataset(
        columns, np.vstack([dataset.align(columns).values for dataset in datasets])
    )
