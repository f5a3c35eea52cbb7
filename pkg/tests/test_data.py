import numpy as np
import pytest

from hdgee.data import (
    ClusteredDataset,
    ColumnSpec,
    load_csv,
    make_folds,
    write_csv,
)
from hdgee.errors import DataError

from conftest import make_dataset


def _write(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


class TestLoadCsv:
    def test_basic_grouping(self, tmp_path):
        path = _write(
            tmp_path,
            "cluster,y,x1,x2,x3\n"
            "A,1.0,0.1,0.2,0.3\n"
            "A,2.0,0.4,0.5,0.6\n"
            "B,3.0,0.7,0.8,0.9\n"
            "B,4.0,1.0,1.1,1.2\n",
        )
        ds = load_csv(path)
        assert (ds.n, ds.p) == (2, 3)
        assert ds.cluster_sizes == (2, 2)

    def test_interleaved_ids_preserve_order(self, tmp_path):
        path = _write(
            tmp_path,
            "cluster,y,x1\nA,1,10\nB,2,20\nA,3,30\nB,4,40\n",
        )
        ds = load_csv(path)
        by_id = {cl.id: cl for cl in ds.clusters}
        assert list(by_id["A"].y) == [1.0, 3.0]
        assert list(by_id["B"].X[:, 0]) == [20.0, 40.0]

    def test_missing_response_column(self, tmp_path):
        path = _write(tmp_path, "cluster,x1\nA,1\nB,2\n")
        with pytest.raises(DataError, match="'y'"):
            load_csv(path)

    def test_non_numeric_cell_named(self, tmp_path):
        path = _write(tmp_path, "cluster,y,x1\nA,1,oops\nB,2,3\n")
        with pytest.raises(DataError, match="oops"):
            load_csv(path)

    def test_empty_file(self, tmp_path):
        path = _write(tmp_path, "")
        with pytest.raises(DataError, match="empty"):
            load_csv(path)

    def test_single_cluster_rejected(self, tmp_path):
        path = _write(tmp_path, "cluster,y,x1\nA,1,2\nA,3,4\n")
        with pytest.raises(DataError, match="at least 2"):
            load_csv(path)

    def test_scientific_notation(self, tmp_path):
        path = _write(tmp_path, "cluster,y,x1\nA,1e-3,2.5E+2\nB,-1E0,0\n")
        ds = load_csv(path)
        assert ds.clusters[0].y[0] == 1e-3
        assert ds.clusters[0].X[0, 0] == 250.0

    def test_custom_schema(self, tmp_path):
        path = _write(tmp_path, "id,outcome,g1,g2\nA,1,2,3\nB,4,5,6\n")
        ds = load_csv(path, ColumnSpec(cluster="id", response="outcome"))
        assert ds.p == 2

    def test_round_trip(self, tmp_path, rng):
        ds = make_dataset(rng, n=4, m=[2, 3, 1, 2], p=3)
        path = tmp_path / "rt.csv"
        write_csv(ds, path)
        back = load_csv(path)
        assert back.n == ds.n and back.p == ds.p
        for a, b in zip(ds.clusters, back.clusters):
            np.testing.assert_array_equal(a.X, b.X)
            np.testing.assert_array_equal(a.y, b.y)


class TestDatasetInvariants:
    def test_mismatched_covariate_dimensions(self, rng):
        a = make_dataset(rng, n=2, m=2, p=3).clusters
        b = make_dataset(rng, n=2, m=2, p=4).clusters
        with pytest.raises(DataError):
            ClusteredDataset([a[0], b[0]])

    def test_immutable_arrays(self, rng):
        ds = make_dataset(rng, n=2, m=2, p=2)
        with pytest.raises(ValueError):
            ds.clusters[0].X[0, 0] = 99.0


class TestMakeFolds:
    def test_even_split(self, rng):
        ds = make_dataset(rng, n=10, m=2, p=2)
        folds = make_folds(ds, K=5, seed=1)
        sizes = [len(folds.test_indices(k)) for k in range(5)]
        assert sizes == [2, 2, 2, 2, 2]

    def test_remainder_split(self, rng):
        ds = make_dataset(rng, n=11, m=2, p=2)
        folds = make_folds(ds, K=5, seed=1)
        sizes = sorted(len(folds.test_indices(k)) for k in range(5))
        assert sizes == [2, 2, 2, 2, 3]

    def test_deterministic(self, rng):
        ds = make_dataset(rng, n=9, m=2, p=2)
        f1 = make_folds(ds, K=3, seed=7)
        f2 = make_folds(ds, K=3, seed=7)
        np.testing.assert_array_equal(f1.fold_of_cluster, f2.fold_of_cluster)

    def test_partition_property(self, rng):
        for seed in range(5):
            ds = make_dataset(rng, n=int(rng.integers(4, 15)), m=2, p=2)
            K = int(rng.integers(2, ds.n + 1))
            folds = make_folds(ds, K=K, seed=seed)
            all_test = np.concatenate([folds.test_indices(k) for k in range(K)])
            assert sorted(all_test) == list(range(ds.n))
            for k in range(K):
                train = set(folds.train_indices(k))
                test = set(folds.test_indices(k))
                assert not train & test
                assert train | test == set(range(ds.n))

    def test_k_out_of_range(self, rng):
        ds = make_dataset(rng, n=4, m=2, p=2)
        with pytest.raises(DataError):
            make_folds(ds, K=5, seed=0)
        with pytest.raises(DataError):
            make_folds(ds, K=1, seed=0)
