import numpy as np
import pytest

from emdkit.core import PointCloud


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_cloud(rng, n, d=2, scale=1.0):
    return PointCloud(rng.random((n, d)) * scale)


def finite_difference_field(fn, pts, step=1e-6):
    """Central finite differences of a scalar function of an (N, D) array."""
    grads = np.zeros_like(pts, dtype=np.float64)
    for j in range(pts.shape[0]):
        for k in range(pts.shape[1]):
            plus = pts.copy()
            plus[j, k] += step
            minus = pts.copy()
            minus[j, k] -= step
            grads[j, k] = (fn(plus) - fn(minus)) / (2 * step)
    return grads
