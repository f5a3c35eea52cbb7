"""Clustered data containers, CSV ingestion, and cluster-level fold splits.

A dataset is an ordered collection of clusters (subjects), each carrying
an m_i x p design matrix and a length-m_i response in observation order.
Clusters are the sampling unit everywhere downstream: cross-validation
splits whole clusters, never individual rows.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DataError

__all__ = [
    "Cluster",
    "ClusteredDataset",
    "ColumnSpec",
    "FoldAssignment",
    "load_csv",
    "write_csv",
    "make_folds",
]


@dataclass(frozen=True)
class Cluster:
    """One subject: an (m, p) design block and its m responses."""

    id: str
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.ascontiguousarray(self.X, dtype=float)
        y = np.ascontiguousarray(self.y, dtype=float)
        if X.ndim != 2:
            raise DataError(f"cluster {self.id!r}: X must be 2-d, got ndim={X.ndim}")
        if y.ndim != 1 or y.shape[0] != X.shape[0]:
            raise DataError(
                f"cluster {self.id!r}: response length {y.shape} does not match "
                f"{X.shape[0]} design rows"
            )
        if X.shape[0] < 1:
            raise DataError(f"cluster {self.id!r} has zero observations")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise DataError(f"cluster {self.id!r} contains non-finite values")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def m(self) -> int:
        return self.X.shape[0]


class ClusteredDataset:
    """Immutable ordered collection of clusters with a common covariate dimension."""

    def __init__(self, clusters: Sequence[Cluster]):
        clusters = tuple(clusters)
        if not clusters:
            raise DataError("dataset has no clusters")
        p = clusters[0].X.shape[1]
        for cl in clusters:
            if cl.X.shape[1] != p:
                raise DataError(
                    f"cluster {cl.id!r} has {cl.X.shape[1]} covariates, expected {p}"
                )
        self._clusters = clusters
        self._p = p
        self._stacked: tuple[np.ndarray, np.ndarray] | None = None
        self._stacked_T: np.ndarray | None = None

    @property
    def clusters(self) -> tuple[Cluster, ...]:
        return self._clusters

    @property
    def n(self) -> int:
        """Number of clusters."""
        return len(self._clusters)

    @property
    def p(self) -> int:
        """Covariate dimension."""
        return self._p

    @property
    def n_obs(self) -> int:
        return sum(cl.m for cl in self._clusters)

    @property
    def cluster_sizes(self) -> tuple[int, ...]:
        return tuple(cl.m for cl in self._clusters)

    def subset(self, indices) -> "ClusteredDataset":
        """New dataset holding the clusters at ``indices`` (in that order)."""
        return ClusteredDataset([self._clusters[i] for i in indices])

    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        """Pooled (N, p) design and length-N response across all clusters.

        Cached; clusters are immutable so the pooled arrays never go stale.
        """
        if self._stacked is None:
            X = np.vstack([cl.X for cl in self._clusters])
            y = np.concatenate([cl.y for cl in self._clusters])
            X.setflags(write=False)
            y.setflags(write=False)
            self._stacked = (X, y)
        return self._stacked

    def stacked_T(self) -> np.ndarray:
        """Row-contiguous (p, N) transpose of the pooled design (cached)."""
        if self._stacked_T is None:
            XT = np.ascontiguousarray(self.stacked()[0].T)
            XT.setflags(write=False)
            self._stacked_T = XT
        return self._stacked_T

    def __len__(self) -> int:
        return self.n

    def __repr__(self):  # pragma: no cover
        return f"ClusteredDataset(n={self.n}, p={self.p}, n_obs={self.n_obs})"


@dataclass
class ColumnSpec:
    """Column names for CSV ingestion.

    When ``covariates`` is None every column other than the cluster id and
    the response is treated as a covariate, in file order.
    """

    cluster: str = "cluster"
    response: str = "y"
    covariates: Sequence[str] | None = None


def load_csv(path, schema: ColumnSpec | None = None) -> ClusteredDataset:
    """Read a clustered dataset from a headered CSV file.

    Rows are grouped by the cluster id column; within-cluster row order is
    file order. Values must parse as floats (scientific notation accepted);
    anything else is a DataError naming the offending cell.
    """
    schema = schema or ColumnSpec()
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: file is empty") from None
        header = [h.strip() for h in header]
        for required in (schema.cluster, schema.response):
            if required not in header:
                raise DataError(f"{path}: missing required column {required!r}")
        if schema.covariates is None:
            cov_names = [
                h for h in header if h not in (schema.cluster, schema.response)
            ]
        else:
            cov_names = list(schema.covariates)
            for name in cov_names:
                if name not in header:
                    raise DataError(f"{path}: missing covariate column {name!r}")
        if not cov_names:
            raise DataError(f"{path}: no covariate columns found")
        idx_cluster = header.index(schema.cluster)
        idx_response = header.index(schema.response)
        idx_cov = [header.index(name) for name in cov_names]

        groups: dict[str, list[list[float]]] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}"
                )
            cid = row[idx_cluster].strip()
            rec = []
            for col_idx, name in zip(
                [idx_response, *idx_cov], [schema.response, *cov_names]
            ):
                cell = row[col_idx].strip()
                try:
                    rec.append(float(cell))
                except ValueError:
                    raise DataError(
                        f"{path}:{lineno}: non-numeric value {cell!r} "
                        f"in column {name!r}"
                    ) from None
            groups.setdefault(cid, []).append(rec)

    if not groups:
        raise DataError(f"{path}: no data rows")
    if len(groups) < 2:
        raise DataError(
            f"{path}: found {len(groups)} cluster(s); at least 2 are required"
        )
    clusters = []
    for cid, rows in groups.items():
        arr = np.asarray(rows, dtype=float)
        clusters.append(Cluster(id=cid, X=arr[:, 1:], y=arr[:, 0]))
    return ClusteredDataset(clusters)


def write_csv(dataset: ClusteredDataset, path, schema: ColumnSpec | None = None):
    """Write a dataset back to CSV (inverse of :func:`load_csv`)."""
    schema = schema or ColumnSpec()
    cov_names = (
        list(schema.covariates)
        if schema.covariates is not None
        else [f"x{j + 1}" for j in range(dataset.p)]
    )
    if len(cov_names) != dataset.p:
        raise DataError(
            f"schema names {len(cov_names)} covariates, dataset has {dataset.p}"
        )
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([schema.cluster, schema.response, *cov_names])
        for cl in dataset.clusters:
            for j in range(cl.m):
                writer.writerow(
                    [cl.id, repr(float(cl.y[j])), *(repr(float(v)) for v in cl.X[j])]
                )


@dataclass(frozen=True)
class FoldAssignment:
    """Cluster-level K-fold split; fold sizes differ by at most one."""

    K: int
    fold_of_cluster: np.ndarray = field(repr=False)

    def test_indices(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of_cluster == k)

    def train_indices(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of_cluster != k)


def make_folds(dataset: ClusteredDataset, K: int, seed: int) -> FoldAssignment:
    """Randomly assign clusters to K near-equal folds, deterministically in seed."""
    n = dataset.n
    if not 2 <= K <= n:
        raise DataError(f"fold count K={K} must satisfy 2 <= K <= n={n}")
    order = np.random.default_rng(seed).permutation(n)
    fold = np.empty(n, dtype=np.int64)
    # dealing the shuffled clusters round-robin keeps sizes within one
    fold[order] = np.arange(n) % K
    return FoldAssignment(K=K, fold_of_cluster=fold)
