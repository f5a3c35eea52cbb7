import numpy as np
import pytest

from hdgee.data import Cluster, ClusteredDataset


def make_dataset(rng, n=6, m=3, p=4, family="gaussian", beta=None, rho=0.0):
    """Small synthetic clustered dataset for unit tests.

    Covariates are iid standard normal; responses follow the requested
    family at the given coefficients (zero by default) with AR(1)-in-time
    Gaussian noise when rho != 0.
    """
    if beta is None:
        beta = np.zeros(p)
    sizes = [m] * n if np.isscalar(m) else list(m)
    clusters = []
    for i, mi in enumerate(sizes):
        X = rng.standard_normal((mi, p))
        eta = X @ beta
        if family == "gaussian":
            e = rng.standard_normal(mi)
            if rho:
                for j in range(1, mi):
                    e[j] = rho * e[j - 1] + np.sqrt(1 - rho**2) * e[j]
            y = eta + e
        else:
            mu = 1.0 / (1.0 + np.exp(-eta))
            y = (rng.uniform(size=mi) < mu).astype(float)
        clusters.append(Cluster(id=f"c{i}", X=X, y=y))
    return ClusteredDataset(clusters)


@pytest.fixture
def rng():
    return np.random.default_rng(20260811)
