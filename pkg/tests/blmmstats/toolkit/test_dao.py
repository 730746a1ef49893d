import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_array_equal

from src.blmmstats.toolkit.dao import (
    MatrixKind,
    MatrixTable,
    TsvDao,
    load_matrix,
    load_sets,
    load_truth,
    read_table,
    save_matrix,
    save_sets,
    save_truth,
    write_table,
)
from src.blmmstats.toolkit.errors import (
    DimensionMismatchError,
    DuplicateSampleError,
    EmptyMatrixError,
    InputError,
    NonFiniteEntryError,
)
from src.blmmstats.toolkit.testing import TestData


@pytest.fixture(scope="module")
def dataset():
    return TestData.related_dataset(n=30, p=4, seed=6)


def test_dataset_files_round_trip_bit_exact(tmp_path, dataset):
    paths = TestData.write_dataset(tmp_path, dataset, sets={"s1": ["snp0", "snp2"], "s2": ["snp3"]})
    dao = TsvDao(paths["phenotype"], paths["genotypes"], paths["covariates"], paths["kinship"], paths["sets"])
    loaded = dao.load_dataset()
    assert_array_equal(loaded.y, dataset.y)
    assert_array_equal(loaded.X, dataset.X)
    assert_array_equal(loaded.G, dataset.G)
    assert_array_equal(loaded.K, dataset.K)
    assert loaded.sample_ids == dataset.sample_ids
    assert loaded.snp_ids == dataset.snp_ids
    assert dao.phenotype_names() == ["y"]
    assert_array_equal(dao.load_phenotype("y"), dataset.y)
    assert dao.load_sets() == {"s1": ["snp0", "snp2"], "s2": ["snp3"]}
    assert dao.snp_index()["snp3"] == 3


def test_phenotype_order_drives_alignment(tmp_path, dataset):
    paths = TestData.write_dataset(tmp_path, dataset)
    order = np.arange(dataset.n)[::-1]
    samples = [dataset.sample_ids[i] for i in order]
    save_matrix(paths["phenotype"], MatrixKind.phenotype, MatrixTable(dataset.y[order, None], samples, ["y"]))
    loaded = TsvDao(paths["phenotype"], paths["genotypes"], paths["covariates"], paths["kinship"]).load_dataset()
    assert loaded.sample_ids == samples
    assert_array_equal(loaded.G, dataset.G[order])
    assert_array_equal(loaded.K, dataset.K[np.ix_(order, order)])


def test_missing_covariates_and_estimated_kinship(tmp_path, dataset):
    paths = TestData.write_dataset(tmp_path, dataset, with_kinship=False)
    loaded = TsvDao(paths["phenotype"], paths["genotypes"]).load_dataset()
    assert loaded.K is None
    assert_array_equal(loaded.X, np.ones((dataset.n, 1)))
    estimated = TsvDao(paths["phenotype"], paths["genotypes"], estimate_kinship=True).load_dataset()
    assert estimated.K.shape == (dataset.n, dataset.n)


def test_covariates_get_intercept(tmp_path):
    path = tmp_path / "cov.tsv"
    save_matrix(path, MatrixKind.covariates, MatrixTable(np.array([[0.5], [1.5]]), ["a", "b"], ["x"]))
    table = load_matrix(path, MatrixKind.covariates)
    assert table.column_ids == ["intercept", "x"]
    assert_array_equal(table.values, [[1.0, 0.5], [1.0, 1.5]])


def test_header_lines(tmp_path):
    path = tmp_path / "t.tsv"
    write_table(path, pd.DataFrame({"a": [0.1, 1 / 3]}), ["seed=1", "command=scan"])
    header, frame = read_table(path)
    assert header == ["seed=1", "command=scan"]
    assert frame["a"].tolist() == [0.1, 1 / 3]


def test_genotype_annotations(tmp_path, dataset):
    paths = TestData.write_dataset(tmp_path, dataset)
    table = load_matrix(paths["genotypes"], MatrixKind.genotypes)
    assert table.annotations.columns.tolist() == ["snp_id", "position", "maf"]
    freq = dataset.G.mean(axis=0) / 2
    assert table.annotations["maf"].to_numpy() == pytest.approx(np.minimum(freq, 1 - freq))


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


@pytest.mark.parametrize(
    "text, kind, error",
    [
        ("sample_id\ty\na\t1\na\t2\n", MatrixKind.phenotype, DuplicateSampleError),
        ("sample_id\ty\na\tnan\n", MatrixKind.phenotype, NonFiniteEntryError),
        ("sample_id\ty\na\tfoo\n", MatrixKind.phenotype, NonFiniteEntryError),
        ("sample_id\ty\na\t1\t2\n", MatrixKind.phenotype, DimensionMismatchError),
        ("# only a header\n", MatrixKind.phenotype, EmptyMatrixError),
        ("id\ty\na\t1\n", MatrixKind.phenotype, InputError),
        ("sample_id\ta\tb\na\t1\t0\n", MatrixKind.kinship, DimensionMismatchError),
        ("sample_id\tb\na\t1\n", MatrixKind.kinship, DimensionMismatchError),
        ("snp_id\tposition\ta\ns1\t1:1\t0\n", MatrixKind.genotypes, InputError),
        ("sample_id\ty\ty\na\t1\t2\n", MatrixKind.phenotype, DuplicateSampleError),
    ],
)
def test_load_matrix_errors(tmp_path, text, kind, error):
    with pytest.raises(error):
        load_matrix(_write(tmp_path / "m.tsv", text), kind)


def test_missing_file(tmp_path):
    with pytest.raises(InputError):
        load_matrix(tmp_path / "missing.tsv", MatrixKind.phenotype)


def test_save_matrix_errors(tmp_path):
    with pytest.raises(NonFiniteEntryError):
        save_matrix(tmp_path / "a.tsv", MatrixKind.phenotype, MatrixTable(np.array([[np.nan]]), ["a"], ["y"]))
    with pytest.raises(DimensionMismatchError):
        save_matrix(tmp_path / "a.tsv", MatrixKind.phenotype, MatrixTable(np.ones((2, 1)), ["a"], ["y"]))
    with pytest.raises(EmptyMatrixError):
        save_matrix(tmp_path / "a.tsv", MatrixKind.phenotype, MatrixTable(np.ones((0, 1)), [], ["y"]))


def test_sets_keep_order(tmp_path):
    path = tmp_path / "sets.tsv"
    save_sets(path, {"z": ["s3", "s1"], "a": ["s2"]})
    assert load_sets(path) == {"z": ["s3", "s1"], "a": ["s2"]}
    with pytest.raises(InputError):
        load_sets(_write(tmp_path / "dup.tsv", "set_id\tsnp_id\na\ts1\na\ts1\n"))


def test_truth_round_trip(tmp_path):
    truth = pd.DataFrame(
        {"set_id": ["s1", "s2"], "scenario": ["null", "SignMixed"], "is_null": [True, False], "n_causal": [0, 3]}
    )
    path = tmp_path / "truth.tsv"
    save_truth(path, truth)
    loaded = load_truth(path)
    assert loaded["is_null"].tolist() == [True, False]
    assert loaded["n_causal"].tolist() == [0, 3]


def test_missing_sets_file(tmp_path, dataset):
    paths = TestData.write_dataset(tmp_path, dataset)
    with pytest.raises(InputError):
        TsvDao(paths["phenotype"], paths["genotypes"]).load_sets()
