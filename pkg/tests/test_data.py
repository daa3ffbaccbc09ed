import numpy as np
import pytest

from gmmpc.data import (
    CsvFormatError,
    Dataset,
    DataError,
    InvalidFolds,
    MissingColumn,
    ZeroVarianceColumn,
    concat,
    kfold_indices,
    kfold_split,
    load_csv,
    minibatches,
    read_csv,
    seeded_rng,
    write_csv,
    zscore_apply,
    zscore_fit_transform,
    zscore_inverse,
)


def test_load_csv():
    dataset = load_csv("a,b\n1,2\n3,4.5\n-1e-3,6\n")
    assert dataset.columns == ("a", "b")
    assert dataset.values.shape == (3, 2)
    assert dataset.values[2, 0] == pytest.approx(-1e-3)
    assert len(dataset) == 3


def test_load_csv_header_only():
    with pytest.raises(CsvFormatError):
        load_csv("a,b\n")


def test_load_csv_empty():
    with pytest.raises(CsvFormatError):
        load_csv("")


def test_load_csv_non_numeric_row_number():
    with pytest.raises(CsvFormatError) as exc_info:
        load_csv("a,b\n1,2\n3,oops\n")
    assert exc_info.value.row == 3
    assert "oops" in str(exc_info.value)


def test_load_csv_missing_cell():
    with pytest.raises(CsvFormatError) as exc_info:
        load_csv("a,b\n1,2\n3,\n")
    assert exc_info.value.row == 3


def test_load_csv_ragged():
    with pytest.raises(CsvFormatError):
        load_csv("a,b\n1,2\n3,4,5\n")


def test_dataset_rejects_non_finite():
    with pytest.raises(DataError):
        Dataset(("a",), np.array([[np.nan]]))


def test_dataset_duplicate_columns():
    with pytest.raises(DataError):
        Dataset(("a", "a"), np.zeros((1, 2)))


def test_align_and_column():
    dataset = load_csv("a,b,c\n1,2,3\n4,5,6\n")
    aligned = dataset.align(["c", "a"])
    assert aligned.columns == ("c", "a")
    np.testing.assert_array_equal(aligned.values, [[3, 1], [6, 4]])
    np.testing.assert_array_equal(dataset.column("b"), [2, 5])
    with pytest.raises(MissingColumn):
        dataset.align(["d"])
    with pytest.raises(MissingColumn):
        dataset.column("d")


def test_zscore_hand_computed():
    dataset = Dataset(("x",), np.array([[1.0], [2.0], [3.0]]))
    normalized = zscore_fit_transform(dataset)
    np.testing.assert_allclose(
        normalized.values[:, 0], [-1.224744871391589, 0.0, 1.224744871391589], atol=1e-12
    )
    assert normalized.norm_stats is not None
    assert normalized.norm_stats.std[0] == pytest.approx(np.sqrt(2 / 3))


def test_zscore_properties():
    rng = np.random.default_rng(0)
    dataset = Dataset(("a", "b"), rng.normal(5.0, 3.0, size=(100, 2)))
    normalized = zscore_fit_transform(dataset)
    np.testing.assert_allclose(normalized.values.mean(axis=0), 0.0, atol=1e-10)
    np.testing.assert_allclose(normalized.values.std(axis=0), 1.0, atol=1e-10)
    again = zscore_fit_transform(Dataset(normalized.columns, normalized.values))
    np.testing.assert_allclose(again.values, normalized.values, atol=1e-10)
    np.testing.assert_allclose(zscore_inverse(normalized).values, dataset.values, atol=1e-10)


def test_zscore_uses_train_statistics():
    train = Dataset(("x",), np.array([[0.0], [2.0]]))
    test = Dataset(("x",), np.array([[4.0]]))
    stats = zscore_fit_transform(train).norm_stats
    assert stats is not None
    assert zscore_apply(stats, test).values[0, 0] == pytest.approx(3.0)


def test_zscore_constant_column():
    dataset = Dataset(("a", "b"), np.array([[1.0, 2.0], [1.0, 3.0]]))
    with pytest.raises(ZeroVarianceColumn) as exc_info:
        zscore_fit_transform(dataset)
    assert exc_info.value.column == "a"


def test_zscore_inverse_requires_stats():
    with pytest.raises(DataError):
        zscore_inverse(Dataset(("a",), np.zeros((1, 1))))


def test_kfold_even():
    folds = kfold_indices(10, 5, seed=1)
    assert [len(fold) for fold in folds] == [2] * 5
    assert sorted(np.concatenate(folds).tolist()) == list(range(10))


def test_kfold_remainder():
    folds = kfold_indices(7, 5, seed=1)
    assert [len(fold) for fold in folds] == [2, 2, 1, 1, 1]


def test_kfold_deterministic():
    first = kfold_indices(50, 5, seed=7)
    second = kfold_indices(50, 5, seed=7)
    for fold1, fold2 in zip(first, second):
        np.testing.assert_array_equal(fold1, fold2)


def test_kfold_negative_seed():
    folds = kfold_indices(10, 5, seed=-1)
    assert sorted(np.concatenate(folds).tolist()) == list(range(10))
    for fold1, fold2 in zip(folds, kfold_indices(10, 5, seed=2**64 - 1)):
        np.testing.assert_array_equal(fold1, fold2)


@pytest.mark.parametrize("n_rows, k", [(10, 1), (3, 5)])
def test_kfold_invalid(n_rows, k):
    with pytest.raises(InvalidFolds):
        kfold_indices(n_rows, k, seed=0)


def test_kfold_split_partitions_rows():
    dataset = Dataset(("i",), np.arange(12.0)[:, np.newaxis])
    seen: list[float] = []
    for train, test in kfold_split(dataset, 4, seed=3):
        assert train.n_rows + test.n_rows == 12
        assert not set(train.values[:, 0]) & set(test.values[:, 0])
        seen.extend(test.values[:, 0])
    assert sorted(seen) == list(range(12))


def test_minibatches():
    batches = minibatches(5, 2, seed=0, pass_index=0)
    assert [len(batch) for batch in batches] == [2, 2, 1]
    assert sorted(np.concatenate(batches).tolist()) == [0, 1, 2, 3, 4]


def test_minibatches_whole():
    (batch,) = minibatches(5, 10, seed=0, pass_index=3)
    assert sorted(batch.tolist()) == [0, 1, 2, 3, 4]


def test_minibatches_deterministic():
    first = minibatches(100, 30, seed=9, pass_index=2)
    second = minibatches(100, 30, seed=9, pass_index=2)
    other = minibatches(100, 30, seed=9, pass_index=3)
    assert all(np.array_equal(a, b) for a, b in zip(first, second))
    assert not all(np.array_equal(a, b) for a, b in zip(first, other))


def test_seeded_rng_wraps_negative_seeds():
    assert seeded_rng(-1, 4).random() == seeded_rng(2**64 - 1, 4).random()
    assert seeded_rng(5).random() != seeded_rng(5, 1).random()


def test_minibatches_invalid_size():
    with pytest.raises(DataError):
        minibatches(5, 0, seed=0, pass_index=0)


def test_csv_round_trip(tmp_path):
    dataset = Dataset(("a", "b"), np.array([[0.1, 1e-20], [1 / 3, -2.5]]))
    path = tmp_path / "data.csv"
    write_csv(path, dataset)
    loaded = read_csv(path)
    assert loaded.columns == dataset.columns
    np.testing.assert_allclose(loaded.values, dataset.values, rtol=1e-12, atol=0)


def test_read_missing_file(tmp_path):
    with pytest.raises(DataError):
        read_csv(tmp_path / "missing.csv")


def test_concat():
    first = Dataset(("a", "b"), np.array([[1.0, 2.0]]))
    second = Dataset(("b", "a"), np.array([[4.0, 3.0]]))
    np.testing.assert_array_equal(concat([first, second]).values, [[1, 2], [3, 4]])
