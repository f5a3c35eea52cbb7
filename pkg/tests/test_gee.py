import numpy as np
import pytest

from hdgee.data import Cluster, ClusteredDataset
from hdgee.errors import DataError, NumericalError
from hdgee.families import get_family
from hdgee.gee import (
    WorkingCorrelation,
    estimate_gamma,
    gee_matrices,
    gee_psi,
    jacobian_parts,
    standardized_residuals,
)

from conftest import make_dataset

GAUSSIAN = get_family("gaussian")
LOGIT = get_family("logit")


def naive_gee_reference(dataset, family, beta, corr):
    """Straightforward double-loop evaluation of Psi and S (test oracle)."""
    p = dataset.p
    psi = np.zeros(p)
    S = np.zeros((p, p))
    for cl in dataset.clusters:
        eta = cl.X @ beta
        mu = family.mean(eta)
        G_half = np.diag(np.sqrt(family.variance(mu)))
        G_half_inv = np.diag(1.0 / np.sqrt(family.variance(mu)))
        Rinv = np.linalg.inv(corr.matrix(cl.m))
        psi += cl.X.T @ G_half @ Rinv @ G_half_inv @ (cl.y - mu)
        S += cl.X.T @ G_half @ Rinv @ G_half @ cl.X
    return psi / dataset.n, S / dataset.n


class TestWorkingCorrelation:
    def test_ar1_structure(self):
        R = WorkingCorrelation("ar1", 0.3).matrix(4)
        assert R[0, 0] == 1.0
        assert R[0, 1] == pytest.approx(0.3)
        assert R[0, 3] == pytest.approx(0.3**3)
        np.testing.assert_allclose(R, R.T)

    def test_exchangeable_structure(self):
        R = WorkingCorrelation("exchangeable", 0.4).matrix(3)
        assert np.all(np.diag(R) == 1.0)
        off = R[~np.eye(3, dtype=bool)]
        assert np.all(off == 0.4)

    def test_inverse_is_inverse(self):
        for kind, g in [("ar1", -0.5), ("exchangeable", 0.25), ("independence", None)]:
            corr = WorkingCorrelation(kind, g)
            for m in (1, 2, 5):
                np.testing.assert_allclose(
                    corr.matrix(m) @ corr.inverse(m), np.eye(m), atol=1e-12
                )

    def test_unstructured_submatrix_rule(self):
        full = np.array([[1.0, 0.5, 0.4], [0.5, 1.0, 0.5], [0.4, 0.5, 1.0]])
        corr = WorkingCorrelation("unstructured", full)
        np.testing.assert_array_equal(corr.matrix(2), full[:2, :2])
        with pytest.raises(DataError):
            corr.matrix(4)

    def test_invalid_parameters(self):
        with pytest.raises(DataError):
            WorkingCorrelation("ar1", 1.0)
        with pytest.raises(DataError):
            WorkingCorrelation("toeplitz", 0.5)
        with pytest.raises(NumericalError):
            WorkingCorrelation("exchangeable", -0.9).matrix(4)

    def test_condition_number_warning(self):
        corr = WorkingCorrelation("exchangeable", 1.0 - 1e-11)
        with pytest.warns(RuntimeWarning, match="condition number"):
            corr.inverse(2)


class TestStandardizedResiduals:
    def test_gaussian_residuals_are_raw(self, rng):
        ds = make_dataset(rng, n=4, m=3, p=2)
        beta = rng.normal(size=2)
        eps = standardized_residuals(ds, GAUSSIAN, beta)
        for cl, e in zip(ds.clusters, eps):
            np.testing.assert_allclose(e, cl.y - cl.X @ beta)

    def test_logit_hand_value(self):
        ds = ClusteredDataset(
            [
                Cluster("a", np.array([[0.0]]), np.array([1.0])),
                Cluster("b", np.array([[0.0]]), np.array([0.0])),
            ]
        )
        eps = standardized_residuals(ds, LOGIT, np.array([1.7]))
        # eta = 0 -> mu = 0.5, sd = 0.5: (1 - 0.5)/0.5 = 1
        assert eps[0][0] == pytest.approx(1.0)
        assert eps[1][0] == pytest.approx(-1.0)

    def test_saturated_mean_guard(self):
        ds = ClusteredDataset(
            [
                Cluster("a", np.array([[40.0]]), np.array([1.0])),
                Cluster("b", np.array([[0.0]]), np.array([0.0])),
            ]
        )
        with pytest.raises(NumericalError, match="cluster 'a'"):
            standardized_residuals(ds, LOGIT, np.array([1.0]))


class TestEstimateGamma:
    def _dataset_from_residuals(self, residual_clusters):
        # gaussian family with zero coefficients: residuals equal y
        clusters = [
            Cluster(str(i), np.zeros((len(e), 1)), np.asarray(e, dtype=float))
            for i, e in enumerate(residual_clusters)
        ]
        return ClusteredDataset(clusters)

    def test_ar1_hand_sum(self):
        ds = self._dataset_from_residuals([[1.0, 1.0], [1.0, -1.0]])
        corr = estimate_gamma(ds, GAUSSIAN, np.zeros(1), "ar1")
        assert corr.gamma == pytest.approx(0.0)

    def test_ar1_positive_dependence(self):
        ds = self._dataset_from_residuals([[1.0, 1.0], [-1.0, -1.0]])
        corr = estimate_gamma(ds, GAUSSIAN, np.zeros(1), "ar1")
        assert corr.gamma == pytest.approx(0.99)  # clamped from 1.0

    def test_exchangeable_hand_sum(self):
        ds = self._dataset_from_residuals([[1.0, 2.0], [1.0, -1.0]])
        # sum over ordered pairs: 2*(1*2) + 2*(1*-1) = 2; denom 2*2*1 = 4
        corr = estimate_gamma(ds, GAUSSIAN, np.zeros(1), "exchangeable")
        assert corr.gamma == pytest.approx(0.5)

    def test_unstructured_hand_outer_product(self):
        ds = self._dataset_from_residuals([[1.0, 0.0], [0.0, 1.0]])
        corr = estimate_gamma(ds, GAUSSIAN, np.zeros(1), "unstructured")
        np.testing.assert_allclose(corr.gamma, 0.5 * np.eye(2))

    def test_unstructured_moment_identity(self, rng):
        # by construction the averaged residual outer product equals R-hat
        ds = make_dataset(rng, n=12, m=3, p=2, rho=0.4)
        beta = rng.normal(scale=0.1, size=2)
        corr = estimate_gamma(ds, GAUSSIAN, beta, "unstructured")
        E = np.stack(standardized_residuals(ds, GAUSSIAN, beta))
        np.testing.assert_allclose(corr.gamma, E.T @ E / ds.n, atol=1e-12)

    def test_unstructured_requires_equal_sizes(self, rng):
        ds = make_dataset(rng, n=4, m=[2, 3, 2, 3], p=2)
        with pytest.raises(DataError, match="equal cluster sizes"):
            estimate_gamma(ds, GAUSSIAN, np.zeros(2), "unstructured")

    def test_independence_has_no_parameter(self, rng):
        ds = make_dataset(rng, n=4, m=2, p=2)
        corr = estimate_gamma(ds, GAUSSIAN, np.zeros(2), "independence")
        assert corr.gamma is None


class TestGeeMatrices:
    def test_independence_gaussian_collapse(self, rng):
        ds = make_dataset(rng, n=6, m=3, p=4)
        beta = rng.normal(size=4)
        mats = gee_matrices(ds, GAUSSIAN, beta, WorkingCorrelation("independence"))
        psi_ref = sum(cl.X.T @ (cl.y - cl.X @ beta) for cl in ds.clusters) / ds.n
        S_ref = sum(cl.X.T @ cl.X for cl in ds.clusters) / ds.n
        np.testing.assert_allclose(mats.psi, psi_ref, atol=1e-12)
        np.testing.assert_allclose(mats.S, S_ref, atol=1e-12)

    def test_zero_residuals_zero_psi_and_v(self, rng):
        beta = rng.normal(size=3)
        clusters = []
        for i in range(4):
            X = rng.standard_normal((3, 3))
            clusters.append(Cluster(str(i), X, X @ beta))
        ds = ClusteredDataset(clusters)
        mats = gee_matrices(ds, GAUSSIAN, beta, WorkingCorrelation("ar1", 0.2))
        np.testing.assert_allclose(mats.psi, 0.0, atol=1e-12)
        np.testing.assert_allclose(mats.V, 0.0, atol=1e-12)

    @pytest.mark.parametrize("family_name", ["gaussian", "logit"])
    def test_matches_naive_reference(self, rng, family_name):
        family = get_family(family_name)
        ds = make_dataset(rng, n=6, m=3, p=4, family=family_name)
        beta = rng.normal(scale=0.3, size=4)
        corr = WorkingCorrelation("ar1", 0.3)
        mats = gee_matrices(ds, family, beta, corr)
        psi_ref, S_ref = naive_gee_reference(ds, family, beta, corr)
        np.testing.assert_allclose(mats.psi, psi_ref, atol=1e-12)
        np.testing.assert_allclose(mats.S, S_ref, atol=1e-12)
        np.testing.assert_allclose(gee_psi(ds, family, beta, corr), psi_ref, atol=1e-12)

    def test_s_symmetric_psd(self, rng):
        ds = make_dataset(rng, n=8, m=3, p=5)
        mats = gee_matrices(
            ds, GAUSSIAN, rng.normal(size=5), WorkingCorrelation("exchangeable", 0.3)
        )
        np.testing.assert_allclose(mats.S, mats.S.T, atol=1e-12)
        np.testing.assert_allclose(mats.V, mats.V.T, atol=1e-12)
        assert np.min(np.linalg.eigvalsh(mats.S)) > 0  # full rank design here
        assert np.min(np.linalg.eigvalsh(mats.V)) > -1e-12

    def test_invariant_under_cluster_reordering(self, rng):
        ds = make_dataset(rng, n=6, m=3, p=3)
        beta = rng.normal(size=3)
        corr = WorkingCorrelation("ar1", 0.25)
        a = gee_matrices(ds, GAUSSIAN, beta, corr)
        b = gee_matrices(
            ClusteredDataset(list(ds.clusters[::-1])), GAUSSIAN, beta, corr
        )
        np.testing.assert_allclose(a.psi, b.psi, atol=1e-12)
        np.testing.assert_allclose(a.S, b.S, atol=1e-12)
        np.testing.assert_allclose(a.V, b.V, atol=1e-12)

    def test_variable_cluster_sizes(self, rng):
        ds = make_dataset(rng, n=5, m=[2, 4, 3, 5, 2], p=3)
        corr = WorkingCorrelation("ar1", 0.3)
        mats = gee_matrices(ds, GAUSSIAN, np.zeros(3), corr)
        psi_ref, S_ref = naive_gee_reference(ds, GAUSSIAN, np.zeros(3), corr)
        np.testing.assert_allclose(mats.psi, psi_ref, atol=1e-12)
        np.testing.assert_allclose(mats.S, S_ref, atol=1e-12)


def finite_difference_jacobian(ds, family, beta, corr, h=1e-6):
    p = ds.p
    J = np.empty((p, p))
    for k in range(p):
        e = np.zeros(p)
        e[k] = h
        J[:, k] = (
            gee_psi(ds, family, beta + e, corr) - gee_psi(ds, family, beta - e, corr)
        ) / (2 * h)
    return J


class TestJacobianParts:
    def test_gaussian_parts_vanish(self, rng):
        ds = make_dataset(rng, n=5, m=3, p=3)
        parts = jacobian_parts(
            ds, GAUSSIAN, rng.normal(size=3), WorkingCorrelation("ar1", 0.3)
        )
        np.testing.assert_array_equal(parts.E_n, 0.0)
        np.testing.assert_array_equal(parts.F_n, 0.0)

    def test_zero_residuals_kill_e_term(self, rng):
        beta = np.array([0.4, -0.2])
        clusters = []
        for i in range(4):
            X = rng.standard_normal((2, 2))
            mu = LOGIT.mean(X @ beta)
            clusters.append(Cluster(str(i), X, mu))  # residuals exactly zero
        ds = ClusteredDataset(clusters)
        parts = jacobian_parts(ds, LOGIT, beta, WorkingCorrelation("ar1", 0.2))
        np.testing.assert_allclose(parts.E_n, 0.0, atol=1e-14)

    def test_matches_finite_differences_logit(self, rng):
        for _ in range(8):
            p = int(rng.integers(2, 4))
            ds = make_dataset(rng, n=5, m=2, p=p, family="logit")
            beta = rng.normal(scale=0.4, size=p)
            corr = WorkingCorrelation("ar1", float(rng.uniform(-0.4, 0.6)))
            parts = jacobian_parts(ds, LOGIT, beta, corr)
            fd = finite_difference_jacobian(ds, LOGIT, beta, corr)
            assert np.max(np.abs(parts.total - fd)) < 1e-4

    def test_gaussian_jacobian_is_minus_s(self, rng):
        ds = make_dataset(rng, n=5, m=3, p=3)
        beta = rng.normal(size=3)
        corr = WorkingCorrelation("exchangeable", 0.35)
        parts = jacobian_parts(ds, GAUSSIAN, beta, corr)
        fd = finite_difference_jacobian(ds, GAUSSIAN, beta, corr)
        np.testing.assert_allclose(-parts.S_term, fd, atol=1e-7)
