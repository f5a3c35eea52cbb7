"""Mean/variance function bundles for the supported regression families.

Each family provides the canonical-link mean function, its derivative,
the variance function and its derivative, and per-observation negative
quasi log-likelihood contributions. The scale parameter is fixed at 1,
so for the Gaussian family the variance is identically one.

Under the canonical link the identity mu_dot(eta) = v(mu(eta)) holds;
several downstream formulas (GEE Jacobians in particular) rely on it.
"""

from __future__ import annotations

import numpy as np

from .errors import DataError

__all__ = ["Family", "GaussianIdentity", "BinomialLogit", "get_family"]


class Family:
    """Base class; concrete families implement the vectorized callables."""

    name: str = ""

    def mean(self, eta):
        raise NotImplementedError

    def mean_deriv(self, eta):
        raise NotImplementedError

    def variance(self, mu):
        raise NotImplementedError

    def variance_deriv(self, mu):
        raise NotImplementedError

    def unit_neg_loglik(self, y, eta):
        """Per-observation negative quasi log-likelihood contribution."""
        raise NotImplementedError

    def validate_response(self, y) -> None:
        """Raise DataError if the response is unusable for this family."""

    def __repr__(self):  # pragma: no cover
        return f"{type(self).__name__}()"


def _check_finite(eta):
    eta = np.asarray(eta, dtype=float)
    if not np.all(np.isfinite(eta)):
        raise DataError("non-finite linear predictor passed to mean function")
    return eta


class GaussianIdentity(Family):
    """Identity link, unit variance: mu(eta) = eta, v(mu) = 1."""

    name = "gaussian"

    def mean(self, eta):
        return _check_finite(eta)

    def mean_deriv(self, eta):
        return np.ones_like(_check_finite(eta))

    def variance(self, mu):
        return np.ones_like(np.asarray(mu, dtype=float))

    def variance_deriv(self, mu):
        return np.zeros_like(np.asarray(mu, dtype=float))

    def unit_neg_loglik(self, y, eta):
        r = np.asarray(y, dtype=float) - _check_finite(eta)
        return 0.5 * r * r


class BinomialLogit(Family):
    """Logit link for 0/1 responses: mu(eta) = 1/(1+exp(-eta)), v = mu(1-mu)."""

    name = "logit"

    def mean(self, eta):
        eta = _check_finite(eta)
        # evaluate exp only at non-positive arguments so it never overflows
        out = np.empty_like(eta)
        pos = eta >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
        e = np.exp(eta[~pos])
        out[~pos] = e / (1.0 + e)
        return out

    def mean_deriv(self, eta):
        mu = self.mean(eta)
        return mu * (1.0 - mu)

    def variance(self, mu):
        mu = np.asarray(mu, dtype=float)
        return mu * (1.0 - mu)

    def variance_deriv(self, mu):
        mu = np.asarray(mu, dtype=float)
        return 1.0 - 2.0 * mu

    def unit_neg_loglik(self, y, eta):
        y = np.asarray(y, dtype=float)
        eta = _check_finite(eta)
        # log(1 + exp(eta)) = max(eta, 0) + log1p(exp(-|eta|))
        return np.maximum(eta, 0.0) + np.log1p(np.exp(-np.abs(eta))) - y * eta

    def validate_response(self, y) -> None:
        y = np.asarray(y, dtype=float)
        if not np.all(np.isin(y, (0.0, 1.0))):
            bad = y[~np.isin(y, (0.0, 1.0))][0]
            raise DataError(
                f"logit family requires a 0/1 response; found value {bad!r}"
            )


_FAMILIES = {
    "gaussian": GaussianIdentity,
    "linear": GaussianIdentity,
    "logit": BinomialLogit,
    "binomial": BinomialLogit,
    "logistic": BinomialLogit,
}


def get_family(name: str) -> Family:
    """Resolve a user-facing family name to a family instance."""
    try:
        return _FAMILIES[name.lower()]()
    except KeyError:
        raise DataError(
            f"unknown family {name!r}; expected one of {sorted(set(_FAMILIES))}"
        ) from None


def neg_quasi_loglik(family: Family, dataset, beta) -> float:
    """Working-independence negative quasi log-likelihood.

    Averages the per-observation contributions over clusters, i.e.
    (1/n) * sum_i sum_j q(y_ij, x_ij' beta) with n the number of clusters.
    """
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (dataset.p,):
        raise DataError(
            f"beta has shape {beta.shape}, expected ({dataset.p},)"
        )
    total = 0.0
    for cl in dataset.clusters:
        total += float(np.sum(family.unit_neg_loglik(cl.y, cl.X @ beta)))
    return total / dataset.n


def neg_quasi_loglik_grad(family: Family, dataset, beta) -> np.ndarray:
    """Gradient of :func:`neg_quasi_loglik` with respect to beta.

    Under the canonical link d q / d eta = mu(eta) - y, so the gradient is
    (1/n) * sum_i X_i' (mu_i - y_i).
    """
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (dataset.p,):
        raise DataError(
            f"beta has shape {beta.shape}, expected ({dataset.p},)"
        )
    g = np.zeros(dataset.p)
    for cl in dataset.clusters:
        g += cl.X.T @ (family.mean(cl.X @ beta) - cl.y)
    return g / dataset.n
