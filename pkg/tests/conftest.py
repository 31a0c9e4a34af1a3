import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=50, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def two_cluster(n_per_class=200, d=2, gap=4.0, seed=0):
    """Two well-separated Gaussian classes, the standard toy for generators."""
    from dpsynth import LabeledTable

    r = np.random.default_rng(seed)
    X0 = r.normal(0.0, 1.0, (n_per_class, d))
    X1 = r.normal(gap, 1.0, (n_per_class, d))
    X = np.vstack([X0, X1])
    y = np.r_[np.zeros(n_per_class, int), np.ones(n_per_class, int)]
    order = r.permutation(y.size)
    return LabeledTable(X[order], y[order])
