"""Estimating-function machinery for clustered data.

Provides the estimating function Psi(beta), the sensitivity matrix S(beta),
the sandwich variability matrix V(beta), moment estimators for the working
correlation, and the analytic Jacobian decomposition of Psi used as a
derivative test oracle.

With G_i(beta) the diagonal matrix of conditional variances and R the
working correlation, the per-cluster building blocks are

    Psi  += X_i' G^{1/2} R^{-1} eps_i          (eps_i = G^{-1/2}(y_i - mu_i))
    S    += X_i' G^{1/2} R^{-1} G^{1/2} X_i
    V    += (X_i' G^{1/2} R^{-1} eps_i)(...)'

all averaged over clusters.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import ClusteredDataset
from .errors import DataError, NumericalError
from .families import Family

__all__ = [
    "WorkingCorrelation",
    "GeeMatrices",
    "JacobianParts",
    "standardized_residuals",
    "estimate_gamma",
    "gee_matrices",
    "gee_psi",
    "jacobian_parts",
]

VARIANCE_FLOOR = 1e-10
CONDITION_WARN = 1e10


class WorkingCorrelation:
    """Working within-cluster correlation structure R(gamma).

    kind is one of 'independence', 'ar1', 'exchangeable', 'unstructured'.
    gamma is a scalar for ar1/exchangeable, a square matrix for
    unstructured (the upper-left submatrix serves smaller clusters),
    and None for independence. Matrices and their inverses are cached
    per requested cluster size.
    """

    def __init__(self, kind: str, gamma=None):
        kind = kind.lower()
        if kind not in ("independence", "ar1", "exchangeable", "unstructured"):
            raise DataError(f"unknown working correlation kind {kind!r}")
        if kind == "independence":
            gamma = None
        elif kind == "unstructured":
            gamma = np.asarray(gamma, dtype=float)
            if gamma.ndim != 2 or gamma.shape[0] != gamma.shape[1]:
                raise DataError("unstructured correlation requires a square matrix")
            if not np.allclose(gamma, gamma.T, atol=1e-12):
                raise DataError("unstructured correlation matrix must be symmetric")
        else:
            gamma = float(gamma)
            if kind == "ar1" and not abs(gamma) < 1.0:
                raise DataError(f"ar1 parameter must satisfy |gamma| < 1, got {gamma}")
            if kind == "exchangeable" and not -1.0 < gamma < 1.0:
                raise DataError(
                    f"exchangeable parameter must lie in (-1, 1), got {gamma}"
                )
        self.kind = kind
        self.gamma = gamma
        self._mats: dict[int, np.ndarray] = {}
        self._invs: dict[int, np.ndarray] = {}

    def matrix(self, m: int) -> np.ndarray:
        """Correlation matrix for a cluster of size m."""
        if m < 1:
            raise DataError(f"cluster size must be positive, got {m}")
        if m not in self._mats:
            self._mats[m] = self._build(m)
        return self._mats[m]

    def inverse(self, m: int) -> np.ndarray:
        """Inverse correlation for size m, via symmetric PD factorization."""
        if m not in self._invs:
            R = self.matrix(m)
            w = np.linalg.eigvalsh(R)
            if w[0] <= 0.0:
                raise NumericalError(
                    f"{self.kind} working correlation is not positive definite "
                    f"at cluster size {m}"
                )
            if w[-1] / w[0] > CONDITION_WARN:
                warnings.warn(
                    f"working correlation at size {m} has condition number "
                    f"{w[-1] / w[0]:.2e}",
                    RuntimeWarning,
                    stacklevel=2,
                )
            c = np.linalg.cholesky(R)
            inv = np.linalg.solve(c.T, np.linalg.solve(c, np.eye(m)))
            self._invs[m] = 0.5 * (inv + inv.T)
        return self._invs[m]

    def _build(self, m: int) -> np.ndarray:
        if self.kind == "independence":
            return np.eye(m)
        if self.kind == "ar1":
            idx = np.arange(m)
            return self.gamma ** np.abs(idx[:, None] - idx[None, :])
        if self.kind == "exchangeable":
            if m > 1 and self.gamma <= -1.0 / (m - 1):
                raise NumericalError(
                    f"exchangeable gamma={self.gamma} is not positive definite "
                    f"at cluster size {m}"
                )
            return (1.0 - self.gamma) * np.eye(m) + self.gamma * np.ones((m, m))
        if m > self.gamma.shape[0]:
            raise DataError(
                f"unstructured correlation of size {self.gamma.shape[0]} cannot "
                f"serve a cluster of size {m}"
            )
        return np.ascontiguousarray(self.gamma[:m, :m])

    def __repr__(self):  # pragma: no cover
        if self.kind == "unstructured":
            return f"WorkingCorrelation('unstructured', {self.gamma.shape[0]}x{self.gamma.shape[0]})"
        return f"WorkingCorrelation({self.kind!r}, gamma={self.gamma})"


@dataclass
class GeeMatrices:
    """Estimating function and its sensitivity/variability matrices."""

    psi: np.ndarray
    S: np.ndarray
    V: np.ndarray


@dataclass
class JacobianParts:
    """Pieces of d Psi / d beta' = -S + E_n + F_n."""

    S_term: np.ndarray
    E_n: np.ndarray
    F_n: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return -self.S_term + self.E_n + self.F_n


def _cluster_blocks(family: Family, cluster, beta):
    """(mu, g, g_sqrt, eps) for one cluster; errors on degenerate variance."""
    eta = cluster.X @ beta
    mu = family.mean(eta)
    g = family.variance(mu)
    bad = g < VARIANCE_FLOOR
    if np.any(bad):
        j = int(np.flatnonzero(bad)[0])
        raise NumericalError(
            f"variance below {VARIANCE_FLOOR:g} at observation {j} of cluster "
            f"{cluster.id!r} (fitted mean saturated)"
        )
    g_sqrt = np.sqrt(g)
    eps = (cluster.y - mu) / g_sqrt
    return mu, g, g_sqrt, eps


def standardized_residuals(
    dataset: ClusteredDataset, family: Family, beta
) -> list[np.ndarray]:
    """Per-cluster residuals scaled by the conditional standard deviation."""
    beta = np.asarray(beta, dtype=float)
    return [_cluster_blocks(family, cl, beta)[3] for cl in dataset.clusters]


def estimate_gamma(
    dataset: ClusteredDataset, family: Family, beta_hat, kind: str
) -> WorkingCorrelation:
    """Moment estimator for the working correlation parameter.

    ar1 averages lag-one products of standardized residuals, exchangeable
    averages all within-cluster pairs, and unstructured returns the raw
    averaged outer product (equal cluster sizes only). Scalar estimates
    are clamped inside the positive-definite range.
    """
    if dataset.n < 2:
        raise DataError("correlation estimation requires at least 2 clusters")
    kind = kind.lower()
    if kind == "independence":
        return WorkingCorrelation("independence")
    resids = standardized_residuals(dataset, family, beta_hat)
    sizes = dataset.cluster_sizes
    if kind == "ar1":
        num = sum(float(e[:-1] @ e[1:]) for e in resids)
        den = sum(m - 1 for m in sizes)
        gamma = num / den if den > 0 else 0.0
        return WorkingCorrelation("ar1", float(np.clip(gamma, -0.99, 0.99)))
    if kind == "exchangeable":
        num = sum(float(np.sum(e) ** 2 - e @ e) for e in resids)
        den = sum(m * (m - 1) for m in sizes)
        gamma = num / den if den > 0 else 0.0
        m_max = max(sizes)
        lo = -0.99 if m_max <= 1 else max(-0.99, -0.99 / (m_max - 1))
        return WorkingCorrelation("exchangeable", float(np.clip(gamma, lo, 0.99)))
    if kind == "unstructured":
        if len(set(sizes)) != 1:
            raise DataError(
                "unstructured correlation estimation requires equal cluster "
                "sizes; use ar1 or exchangeable for variable-size data"
            )
        E = np.stack(resids)
        R = (E.T @ E) / dataset.n
        corr = WorkingCorrelation("unstructured", R)
        try:
            corr.inverse(sizes[0])
        except NumericalError:
            raise NumericalError(
                "moment estimate of the unstructured correlation is not "
                "positive definite; use a structured working correlation"
            ) from None
        return corr
    raise DataError(f"unknown working correlation kind {kind!r}")


def gee_matrices(
    dataset: ClusteredDataset, family: Family, beta, corr: WorkingCorrelation
) -> GeeMatrices:
    """Psi, S and the sandwich V, averaged over clusters."""
    beta = np.asarray(beta, dtype=float)
    p = dataset.p
    psi = np.zeros(p)
    S = np.zeros((p, p))
    V = np.zeros((p, p))
    for cl in dataset.clusters:
        _, _, g_sqrt, eps = _cluster_blocks(family, cl, beta)
        W = corr.inverse(cl.m)
        A = cl.X * g_sqrt[:, None]  # G^{1/2} X
        a = A.T @ (W @ eps)
        psi += a
        S += A.T @ W @ A
        V += np.outer(a, a)
    n = dataset.n
    return GeeMatrices(psi=psi / n, S=S / n, V=V / n)


def gee_psi(
    dataset: ClusteredDataset, family: Family, beta, corr: WorkingCorrelation
) -> np.ndarray:
    """The estimating function alone (cheaper than gee_matrices)."""
    beta = np.asarray(beta, dtype=float)
    psi = np.zeros(dataset.p)
    for cl in dataset.clusters:
        _, _, g_sqrt, eps = _cluster_blocks(family, cl, beta)
        W = corr.inverse(cl.m)
        psi += (cl.X * g_sqrt[:, None]).T @ (W @ eps)
    return psi / dataset.n


def jacobian_parts(
    dataset: ClusteredDataset, family: Family, beta, corr: WorkingCorrelation
) -> JacobianParts:
    """Analytic decomposition of the Jacobian of Psi at beta.

    For the Gaussian family the variance derivative vanishes, so both
    correction terms are identically zero and the Jacobian is -S.
    """
    beta = np.asarray(beta, dtype=float)
    p = dataset.p
    S = np.zeros((p, p))
    E = np.zeros((p, p))
    F = np.zeros((p, p))
    for cl in dataset.clusters:
        mu, g, g_sqrt, eps = _cluster_blocks(family, cl, beta)
        vdot = family.variance_deriv(mu)
        W = corr.inverse(cl.m)
        A = cl.X * g_sqrt[:, None]
        T = A.T @ W  # p x m, column j is X' G^{1/2} R^{-1} e_j
        S += T @ A
        u = W @ eps  # R^{-1} G^{-1/2} (y - mu)
        E -= 0.5 * (T * (vdot * eps)[None, :]) @ cl.X
        F += 0.5 * cl.X.T @ ((vdot * g_sqrt * u)[:, None] * cl.X)
    n = dataset.n
    return JacobianParts(S_term=S / n, E_n=E / n, F_n=F / n)
